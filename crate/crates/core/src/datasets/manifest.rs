use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{load_record_files, LabeledDataset, RecordLayout, SplitTag};
use crate::error::{Error, Result};

pub const PAYLOAD_FORMAT: &str = "label-byte+chw-planes";

/// JSON sidecar describing one dataset payload file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n_classes: usize,
    pub counts_per_class: Vec<usize>,
    pub sha256: String,
    pub split_tag: SplitTag,
    pub class_names: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Payload path relative to the manifest's directory.
    pub payload: String,
    pub format: String,
}

fn encode_records(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let (h, w, c) = ds.dims();
    let plane = h * w;
    let mut out = Vec::with_capacity(ds.len() * (1 + plane * c));
    for i in 0..ds.len() {
        let label = u8::try_from(ds.label(i)).map_err(|_| Error::arg("record format holds at most 256 classes"))?;
        out.push(label);
        let img = ds.image(i);
        for ch in 0..c {
            out.extend((0..plane).map(|p| img[p * c + ch]));
        }
    }
    Ok(out)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<dir>/<name>.bin` and `<dir>/<name>.json`; returns the manifest path.
pub fn save_dataset(dir: impl AsRef<Path>, name: &str, ds: &LabeledDataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let payload = encode_records(ds)?;
    let (height, width, channels) = ds.dims();
    let manifest = DatasetManifest {
        name: name.to_string(),
        n_classes: ds.n_classes(),
        counts_per_class: ds.counts_per_class(),
        sha256: sha256_hex(&payload),
        split_tag: ds.split_tag,
        class_names: ds.class_names().to_vec(),
        height,
        width,
        channels,
        payload: format!("{name}.bin"),
        format: PAYLOAD_FORMAT.to_string(),
    };
    fs::write(dir.join(&manifest.payload), &payload)?;
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads a manifest and its payload, verifying the payload hash and counts.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(DatasetManifest, LabeledDataset)> {
    let path = path.as_ref();
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format != PAYLOAD_FORMAT {
        return Err(Error::Artifact(format!("unsupported payload format {}", manifest.format)));
    }
    let payload = path.parent().unwrap_or(Path::new(".")).join(&manifest.payload);
    let bytes = fs::read(&payload)?;
    let digest = sha256_hex(&bytes);
    if digest != manifest.sha256 {
        return Err(Error::Artifact(format!(
            "payload {} hash {digest} does not match manifest {}",
            payload.display(),
            manifest.sha256
        )));
    }
    let layout = RecordLayout {
        height: manifest.height,
        width: manifest.width,
        channels: manifest.channels,
    };
    let ds = load_record_files(&[payload], layout, manifest.class_names.clone(), manifest.split_tag)?;
    if ds.counts_per_class() != manifest.counts_per_class {
        return Err(Error::Artifact("class counts differ from manifest".into()));
    }
    Ok((manifest, ds))
}
