use std::fs;
use std::path::{Path, PathBuf};

use super::{LabeledDataset, SplitTag};
use crate::error::{Error, Result};

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Fixed-size record: one label byte followed by `C` row-major planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordLayout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl RecordLayout {
    pub const CIFAR10: RecordLayout = RecordLayout {
        height: 32,
        width: 32,
        channels: 3,
    };

    pub fn record_len(&self) -> usize {
        1 + self.height * self.width * self.channels
    }
}

/// Loads every `*.bin` batch file of a CIFAR-10 binary directory, in file-name
/// order, preserving record order inside each file.
pub fn load_cifar10_binary(dir: impl AsRef<Path>) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::NoBatchFiles(dir.to_path_buf()));
    }
    let names = read_class_names(dir).unwrap_or_else(|| CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect());
    load_record_files(&files, RecordLayout::CIFAR10, names, SplitTag::Train)
}

fn read_class_names(dir: &Path) -> Option<Vec<String>> {
    let text = fs::read_to_string(dir.join("batches.meta.txt")).ok()?;
    let names: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    (!names.is_empty()).then_some(names)
}

/// Reads record files in the CIFAR binary layout (also used for pre-converted
/// SVHN and for datasets written by [`super::save_dataset`]).
pub fn load_record_files(
    files: &[PathBuf],
    layout: RecordLayout,
    class_names: Vec<String>,
    split_tag: SplitTag,
) -> Result<LabeledDataset> {
    let rec = layout.record_len();
    let plane = layout.height * layout.width;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = fs::read(path)?;
        if bytes.len() % rec != 0 {
            let offset = (bytes.len() / rec * rec) as u64;
            return Err(Error::Ingest {
                path: path.clone(),
                offset,
                message: format!(
                    "truncated record {} ({} trailing bytes, {rec} required per record)",
                    offset as usize / rec,
                    bytes.len() % rec
                ),
            });
        }
        images.reserve(bytes.len() / rec * (rec - 1));
        for (r, chunk) in bytes.chunks_exact(rec).enumerate() {
            let label = chunk[0] as usize;
            if label >= class_names.len() {
                return Err(Error::Ingest {
                    path: path.clone(),
                    offset: (r * rec) as u64,
                    message: format!("label {label} outside [0, {})", class_names.len()),
                });
            }
            labels.push(label);
            let planes = &chunk[1..];
            // CHW planes -> HWC pixels
            for p in 0..plane {
                for c in 0..layout.channels {
                    images.push(planes[c * plane + p]);
                }
            }
        }
    }
    LabeledDataset::new((layout.height, layout.width, layout.channels), images, labels, class_names, split_tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_records(dir: &Path, name: &str, labels: &[u8]) {
        let mut bytes = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            bytes.push(l);
            bytes.extend((0..3072).map(|p| ((p + i) % 251) as u8));
        }
        fs::write(dir.join(name), bytes).unwrap();
    }

    #[test]
    fn loads_batches_in_order() {
        let dir = tempfile::tempdir().unwrap();
        write_records(dir.path(), "data_batch_2.bin", &[3, 4]);
        write_records(dir.path(), "data_batch_1.bin", &[9, 0, 1]);
        let ds = load_cifar10_binary(dir.path()).unwrap();
        assert_eq!(ds.labels(), &[9, 0, 1, 3, 4]);
        assert_eq!(ds.dims(), (32, 32, 3));
        assert_eq!(ds.n_classes(), 10);
        // pixel (0,0) channel G came from plane 1 offset 0
        assert_eq!(ds.image(0)[1], (1024 % 251) as u8);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10_binary(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no batch files found"));
    }

    #[test]
    fn truncated_file_reports_record_zero() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; 3072]).unwrap();
        match load_cifar10_binary(dir.path()).unwrap_err() {
            Error::Ingest { path, offset, message } => {
                assert!(path.ends_with("data_batch_1.bin"));
                assert_eq!(offset, 0);
                assert!(message.contains("record 0"));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
