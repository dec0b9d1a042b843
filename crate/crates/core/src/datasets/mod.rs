//! Labeled image datasets, their on-disk formats, and the split/subset
//! constructions used by the experiments.

mod cifar;
mod manifest;
mod subsets;
mod synthetic;

pub use cifar::{load_cifar10_binary, load_record_files, RecordLayout, CIFAR10_CLASSES};
pub use manifest::{load_manifest, save_dataset, DatasetManifest};
pub(crate) use manifest::sha256_hex;
pub use subsets::{dirichlet_subsets, dirichlet_subsets_with, split_pair, split_ratio, SubsetPlan, DEFAULT_MEAN_FRACTION};
pub use synthetic::{gen_synthetic, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    ModuleEval,
}

/// Provenance of a one-vs-rest view built by [`LabeledDataset::binary_view`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinarySource {
    pub original_classes: usize,
    pub target_class: usize,
}

/// Images stored as unsigned 8-bit `H×W×C` grids, one contiguous buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    height: usize,
    width: usize,
    channels: usize,
    images: Vec<u8>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    pub split_tag: SplitTag,
    pub binary_source: Option<BinarySource>,
}

/// A contiguous copy of some images, ready to be fed to a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub len: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl ImageBatch {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.height * self.width * self.channels;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Images `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> ImageBatch {
        let n = self.height * self.width * self.channels;
        ImageBatch {
            len: end - start,
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.pixels[start * n..end * n].to_vec(),
        }
    }
}

impl LabeledDataset {
    pub fn new(
        (height, width, channels): (usize, usize, usize),
        images: Vec<u8>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split_tag: SplitTag,
    ) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 {
            return Err(Error::arg("image dimensions must be positive"));
        }
        if images.len() != labels.len() * per {
            return Err(Error::arg(format!(
                "{} pixel bytes do not hold {} images of {height}x{width}x{channels}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::arg(format!(
                "label {bad} outside [0, {})",
                class_names.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            images,
            labels,
            class_names,
            split_tag,
            binary_source: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn counts_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let n = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        ImageBatch {
            len: indices.len(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels,
        }
    }

    pub fn full_batch(&self) -> ImageBatch {
        ImageBatch {
            len: self.len(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.images.clone(),
        }
    }

    /// Copies the listed samples (in the given order) into a new dataset.
    pub fn subset(&self, indices: &[usize], split_tag: SplitTag) -> LabeledDataset {
        let batch = self.batch(indices);
        LabeledDataset {
            height: self.height,
            width: self.width,
            channels: self.channels,
            images: batch.pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            split_tag,
            binary_source: self.binary_source.clone(),
        }
    }

    pub fn with_tag(mut self, split_tag: SplitTag) -> Self {
        self.split_tag = split_tag;
        self
    }

    /// Relabels `tc` as 1 and every other class as 0; pixels untouched.
    pub fn binary_view(&self, target_class: usize) -> Result<LabeledDataset> {
        if target_class >= self.n_classes() {
            return Err(Error::arg(format!(
                "target class {target_class} outside [0, {})",
                self.n_classes()
            )));
        }
        let name = &self.class_names[target_class];
        Ok(LabeledDataset {
            height: self.height,
            width: self.width,
            channels: self.channels,
            images: self.images.clone(),
            labels: self
                .labels
                .iter()
                .map(|&l| usize::from(l == target_class))
                .collect(),
            class_names: vec![format!("non-{name}"), name.clone()],
            split_tag: self.split_tag,
            binary_source: Some(BinarySource {
                original_classes: self.n_classes(),
                target_class,
            }),
        })
    }

    /// Keeps only samples of `classes` and renumbers them `0..classes.len()`
    /// in the order given.
    pub fn select_classes(&self, classes: &[usize]) -> Result<LabeledDataset> {
        let mut remap = vec![None; self.n_classes()];
        for (new, &old) in classes.iter().enumerate() {
            if old >= self.n_classes() {
                return Err(Error::arg(format!("class {old} not in dataset")));
            }
            if remap[old].is_some() {
                return Err(Error::arg(format!("class {old} listed twice")));
            }
            remap[old] = Some(new);
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| remap[self.labels[i]].is_some()).collect();
        let mut out = self.subset(&keep, self.split_tag);
        out.labels = keep.iter().map(|&i| remap[self.labels[i]].unwrap()).collect();
        out.class_names = classes.iter().map(|&c| self.class_names[c].clone()).collect();
        out.binary_source = None;
        Ok(out)
    }

    /// Concatenates datasets that share image dims and class names.
    pub fn concat(parts: &[&LabeledDataset], split_tag: SplitTag) -> Result<LabeledDataset> {
        let first = parts.first().ok_or_else(|| Error::arg("nothing to concatenate"))?;
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dims() != first.dims() || p.class_names != first.class_names {
                return Err(Error::arg("datasets differ in image dims or class space"));
            }
            images.extend_from_slice(&p.images);
            labels.extend_from_slice(&p.labels);
        }
        LabeledDataset::new(first.dims(), images, labels, first.class_names.clone(), split_tag)
    }

    /// Replaces the class space; `labels` are reassigned by `map(old) -> new`.
    pub fn remap_labels(&self, class_names: Vec<String>, map: impl Fn(usize) -> usize) -> Result<LabeledDataset> {
        let labels = self.labels.iter().map(|&l| map(l)).collect();
        LabeledDataset::new(self.dims(), self.images.clone(), labels, class_names, self.split_tag)
    }
}
