//! On-disk model directory: `spec.json`, `params.bin`, optional `metrics.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ConvParams, DenseParams, Network, Normalization};
use super::spec::ArchitectureSpec;
use super::{Metrics, TrainConfig, TrainedModel};
use crate::datasets::sha256_hex;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "modsplit-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const PARAMS_FILE: &str = "params.bin";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRef {
    file: String,
    count: usize,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    format: String,
    version: u32,
    hash: String,
    spec: ArchitectureSpec,
    normalization: Normalization,
    #[serde(default)]
    train_config: Option<TrainConfig>,
    params: ParamsRef,
}

pub(crate) fn encode_f32<'a>(slices: impl IntoIterator<Item = &'a [f32]>) -> Vec<u8> {
    let mut out = Vec::new();
    for s in slices {
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Artifact("parameter blob length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn model_hash(net: &Network) -> String {
    let mut bytes = serde_json::to_vec(net.spec()).expect("spec serializes");
    bytes.extend(serde_json::to_vec(&net.norm).expect("normalization serializes"));
    bytes.extend(encode_f32(net.param_slices()));
    sha256_hex(&bytes)
}

pub fn save_model(dir: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let blob = encode_f32(model.net.param_slices());
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        version: MODEL_FORMAT_VERSION,
        hash: model.hash(),
        spec: model.spec().clone(),
        normalization: model.net.norm.clone(),
        train_config: model.train_config.clone(),
        params: ParamsRef {
            file: PARAMS_FILE.into(),
            count: blob.len() / 4,
            sha256: sha256_hex(&blob),
        },
    };
    fs::write(dir.join(PARAMS_FILE), &blob)?;
    fs::write(dir.join("spec.json"), serde_json::to_vec_pretty(&header)?)?;
    let metrics = dir.join("metrics.json");
    match &model.metrics {
        Some(m) => fs::write(metrics, serde_json::to_vec_pretty(m)?)?,
        None if metrics.exists() => fs::remove_file(metrics)?,
        None => {}
    }
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<TrainedModel> {
    let dir = dir.as_ref();
    let header: ModelHeader = serde_json::from_slice(&fs::read(dir.join("spec.json"))?)?;
    if header.format != MODEL_FORMAT || header.version != MODEL_FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "unsupported model format {} v{}",
            header.format, header.version
        )));
    }
    let blob = fs::read(dir.join(&header.params.file))?;
    if sha256_hex(&blob) != header.params.sha256 {
        return Err(Error::Artifact(format!("{} does not match its recorded hash", header.params.file)));
    }
    let values = decode_f32(&blob)?;
    if values.len() != header.params.count {
        return Err(Error::Artifact("parameter count differs from header".into()));
    }
    let plan = header.spec.plan()?;
    let mut it = values.into_iter();
    let mut take = |n: usize| -> Result<Vec<f32>> {
        let v: Vec<f32> = it.by_ref().take(n).collect();
        if v.len() != n {
            return Err(Error::Artifact("parameter blob too short".into()));
        }
        Ok(v)
    };
    let mut conv = Vec::new();
    for (l, cs) in header.spec.conv_layers.iter().enumerate() {
        let cin = plan.in_channels[l];
        let k = cs.kernel_size;
        conv.push(ConvParams {
            out_channels: cs.out_kernels,
            in_channels: cin,
            kernel: k,
            weight: take(cs.out_kernels * cin * k * k)?,
            bias: take(cs.out_kernels)?,
        });
    }
    let mut fc = Vec::new();
    for &(inp, out) in &plan.fc_dims {
        fc.push(DenseParams {
            in_features: inp,
            out_features: out,
            weight: take(inp * out)?,
            bias: take(out)?,
        });
    }
    let net = Network::from_parts(header.spec, conv, fc, header.normalization)?;
    if model_hash(&net) != header.hash {
        return Err(Error::Artifact("model hash mismatch".into()));
    }
    let metrics_path = dir.join("metrics.json");
    let metrics: Option<Metrics> = if metrics_path.exists() {
        Some(serde_json::from_slice(&fs::read(metrics_path)?)?)
    } else {
        None
    };
    Ok(TrainedModel {
        net,
        train_config: header.train_config,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_model;

    #[test]
    fn round_trip_preserves_hash() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model(ArchitectureSpec::desk_ince(5), 3).unwrap();
        save_model(dir.path(), &m).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
    }

    #[test]
    fn corrupted_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model(ArchitectureSpec::desk_plain(4), 3).unwrap();
        save_model(dir.path(), &m).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let mut b = fs::read(&p).unwrap();
        b[10] ^= 1;
        fs::write(&p, b).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
