//! Content-addressed bookkeeping of everything the CLI writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HOME_VAR: &str = "MODSPLIT_HOME";
const INDEX_FILE: &str = "index.json";
const INDEX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub kind: String,
    /// Content hash of the payload at `path`.
    pub hash: String,
    pub path: PathBuf,
    /// Hashes of the artifacts this one was derived from.
    pub parents: Vec<String>,
    /// Digest of the command and inputs that produced it.
    pub input_key: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    version: u32,
    artifacts: BTreeMap<String, Entry>,
}

/// The artifact index under the store root (`$MODSPLIT_HOME`, else `~/.modsplit`).
#[derive(Debug)]
pub struct ArtifactStore {
    root: PathBuf,
    index: Index,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let path = root.join(INDEX_FILE);
        let index = if path.exists() {
            let index: Index = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| Error::Artifact(format!("corrupt store index {}: {e}", path.display())))?;
            if index.version != INDEX_VERSION {
                return Err(Error::Artifact(format!("unsupported store index version {}", index.version)));
            }
            index
        } else {
            Index {
                version: INDEX_VERSION,
                artifacts: BTreeMap::new(),
            }
        };
        Ok(Self { root, index })
    }

    pub fn default_root() -> PathBuf {
        match std::env::var_os(HOME_VAR) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")).join(".modsplit"),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.index.artifacts.iter()
    }

    /// The recorded artifact for `input_key` at `path`, if its payload is unchanged.
    pub fn up_to_date(&self, input_key: &str, path: &Path) -> Option<&Entry> {
        let path = absolute(path);
        self.index
            .artifacts
            .values()
            .find(|e| e.input_key == input_key && e.path == path)
            .filter(|e| hash_path(&e.path).is_ok_and(|h| h == e.hash))
    }

    /// Hashes the payload at `path`, records it and persists the index.
    /// Earlier entries for the same path are superseded.
    pub fn record(&mut self, kind: &str, path: &Path, parents: Vec<String>, input_key: &str) -> Result<String> {
        let path = absolute(path);
        let hash = hash_path(&path)?;
        if parents.contains(&hash) {
            return Err(Error::Artifact(format!("{} would be its own parent", path.display())));
        }
        self.index.artifacts.retain(|_, e| e.path != path);
        let id = format!("{kind}-{}", &hash[..16]);
        self.index.artifacts.insert(
            id.clone(),
            Entry {
                kind: kind.into(),
                hash,
                path,
                parents,
                input_key: input_key.into(),
            },
        );
        self.save()?;
        Ok(id)
    }

    /// Ids whose payload no longer matches the recorded hash.
    pub fn verify(&self) -> Vec<String> {
        self.index
            .artifacts
            .iter()
            .filter(|(_, e)| hash_path(&e.path).map_or(true, |h| h != e.hash))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Write-temp-then-rename so readers never see a torn index.
    fn save(&self) -> Result<()> {
        let tmp = self.root.join(format!("{INDEX_FILE}.{}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec_pretty(&self.index)?)?;
        fs::rename(&tmp, self.root.join(INDEX_FILE))?;
        Ok(())
    }
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf()))
}

/// SHA-256 over a file, or over every file below a directory (relative
/// paths and contents, in sorted order).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            let bytes = fs::read(&f)?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a command line's meaningful parts.
pub fn input_key(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_then_up_to_date_until_payload_changes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.txt");
        fs::write(&out, "one").unwrap();
        let mut store = ArtifactStore::open(dir.path().join("store")).unwrap();
        let id = store.record("data", &out, vec![], "k1").unwrap();
        assert!(id.starts_with("data-"));
        assert!(store.up_to_date("k1", &out).is_some());
        assert!(store.up_to_date("k2", &out).is_none());
        let reopened = ArtifactStore::open(dir.path().join("store")).unwrap();
        assert!(reopened.up_to_date("k1", &out).is_some());
        fs::write(&out, "two").unwrap();
        assert!(store.up_to_date("k1", &out).is_none());
        assert_eq!(store.verify(), vec![id]);
    }

    #[test]
    fn directory_hash_sees_names_and_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/x"), "1").unwrap();
        let h1 = hash_path(dir.path()).unwrap();
        fs::rename(dir.path().join("sub/x"), dir.path().join("sub/y")).unwrap();
        let h2 = hash_path(dir.path()).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(h2, hash_path(dir.path()).unwrap());
    }

    #[test]
    fn same_path_supersedes_and_self_parent_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("m");
        fs::write(&out, "v1").unwrap();
        let mut store = ArtifactStore::open(dir.path().join("s")).unwrap();
        store.record("model", &out, vec![], "a").unwrap();
        fs::write(&out, "v2").unwrap();
        store.record("model", &out, vec![], "b").unwrap();
        assert_eq!(store.entries().count(), 1);
        let h = hash_path(&out).unwrap();
        assert!(store.record("model", &out, vec![h], "c").is_err());
    }
}
