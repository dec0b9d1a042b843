//! Module bundles and composed-model manifests on disk.
//!
//! A bundle directory holds `bundle.json`, `mask.bits` (base64 retention
//! bitset over the parent's kernels), the sliced network under `module/`,
//! `head.bin` for gradient modules and an optional `metrics.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::compose::{compose, ComposedModel, Mode};
use super::module::{split_by_layer, Provenance, SlicedModule};
use crate::bits;
use crate::error::{Error, Result};
use crate::grad::Head;
use crate::zoo::{load_model, save_model, TrainedModel};

pub const BUNDLE_FORMAT: &str = "modsplit-module";
pub const COMPOSED_FORMAT: &str = "modsplit-composed";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub format: String,
    pub version: u32,
    pub model_hash: String,
    pub class_id: usize,
    pub provenance: Provenance,
    /// Kernels per layer of the parent model.
    pub parent_widths: Vec<usize>,
    pub n_kernels: usize,
    pub mask_file: String,
    #[serde(default)]
    pub head_file: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMetrics {
    pub retained_kernels: usize,
    pub total_kernels: usize,
    #[serde(default)]
    pub valid_acc: Option<f64>,
    #[serde(default)]
    pub f1: Option<f64>,
}

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn bytes_f64(b: &[u8]) -> Result<Vec<f64>> {
    if b.len() % 8 != 0 {
        return Err(Error::Artifact("head blob length is not a multiple of 8".into()));
    }
    Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn save_bundle(dir: impl AsRef<Path>, module: &SlicedModule, parent_widths: &[usize], metrics: Option<&BundleMetrics>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let retained = module.retained_bits(parent_widths);
    fs::write(dir.join("mask.bits"), bits::encode(&retained))?;
    let head_file = match &module.head {
        Some(h) => {
            fs::write(dir.join("head.bin"), f64_bytes(&h.params()))?;
            Some("head.bin".to_string())
        }
        None => None,
    };
    save_model(
        dir.join("module"),
        &TrainedModel {
            net: module.net.clone(),
            train_config: None,
            metrics: None,
        },
    )?;
    let header = BundleHeader {
        format: BUNDLE_FORMAT.into(),
        version: FORMAT_VERSION,
        model_hash: module.parent_hash.clone(),
        class_id: module.class_id,
        provenance: module.provenance,
        parent_widths: parent_widths.to_vec(),
        n_kernels: module.retained_kernels(),
        mask_file: "mask.bits".into(),
        head_file,
    };
    fs::write(dir.join("bundle.json"), serde_json::to_vec_pretty(&header)?)?;
    if let Some(m) = metrics {
        fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(m)?)?;
    }
    Ok(())
}

pub fn load_bundle_header(dir: impl AsRef<Path>) -> Result<BundleHeader> {
    let header: BundleHeader = serde_json::from_slice(&fs::read(dir.as_ref().join("bundle.json"))?)?;
    if header.format != BUNDLE_FORMAT || header.version != FORMAT_VERSION {
        return Err(Error::Artifact(format!("unsupported bundle format {} v{}", header.format, header.version)));
    }
    Ok(header)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<SlicedModule> {
    let dir = dir.as_ref();
    let header = load_bundle_header(dir)?;
    let total: usize = header.parent_widths.iter().sum();
    let retained = bits::decode(fs::read_to_string(dir.join(&header.mask_file))?.trim(), total)?;
    let kept: Vec<Vec<usize>> = split_by_layer(&retained, &header.parent_widths)?
        .into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k).collect())
        .collect();
    let net = load_model(dir.join("module"))?.net;
    let widths: Vec<usize> = net.conv.iter().map(|c| c.out_channels).collect();
    if kept.iter().map(Vec::len).ne(widths.iter().copied()) || header.n_kernels != widths.iter().sum::<usize>() {
        return Err(Error::Artifact("mask bits disagree with the sliced network".into()));
    }
    let head = match &header.head_file {
        Some(f) => {
            let n = net.n_classes();
            Some(Head::from_params(n, &bytes_f64(&fs::read(dir.join(f))?)?).ok_or_else(|| Error::Artifact("head blob has the wrong size".into()))?)
        }
        None => None,
    };
    Ok(SlicedModule {
        parent_hash: header.model_hash,
        class_id: header.class_id,
        provenance: header.provenance,
        net,
        kept,
        head,
    })
}

pub fn load_bundle_metrics(dir: impl AsRef<Path>) -> Result<Option<BundleMetrics>> {
    let p = dir.as_ref().join("metrics.json");
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(p)?)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposedManifest {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    /// Bundle directories in class order, relative to the manifest's directory when not absolute.
    pub modules: Vec<PathBuf>,
    #[serde(default)]
    pub calibration: Option<Vec<(f64, f64)>>,
}

pub fn save_composed(path: impl AsRef<Path>, cm: &ComposedModel, bundle_dirs: &[PathBuf]) -> Result<()> {
    if bundle_dirs.len() != cm.modules.len() {
        return Err(Error::Compose("one bundle path per module is required".into()));
    }
    let manifest = ComposedManifest {
        format: COMPOSED_FORMAT.into(),
        version: FORMAT_VERSION,
        mode: cm.mode,
        modules: bundle_dirs.to_vec(),
        calibration: cm.calibration.clone(),
    };
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_composed(path: impl AsRef<Path>) -> Result<ComposedModel> {
    let path = path.as_ref();
    let manifest: ComposedManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format != COMPOSED_FORMAT || manifest.version != FORMAT_VERSION {
        return Err(Error::Artifact(format!("unsupported manifest format {} v{}", manifest.format, manifest.version)));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let modules = manifest
        .modules
        .iter()
        .map(|p| load_bundle(if p.is_absolute() { p.clone() } else { base.join(p) }))
        .collect::<Result<Vec<_>>>()?;
    let mut cm = compose(modules, manifest.mode)?;
    cm.calibration = manifest.calibration;
    Ok(cm)
}
