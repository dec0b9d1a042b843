use serde::{Deserialize, Serialize};

use crate::datasets::ImageBatch;
use crate::error::{Error, Result};
use crate::grad::Head;
use crate::zoo::{ConvParams, DenseParams, Network, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ga,
    Grad,
}

/// A standalone per-class module with its dropped kernels physically removed.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicedModule {
    pub parent_hash: String,
    pub class_id: usize,
    pub provenance: Provenance,
    pub net: Network,
    /// Parent kernel indices kept in every layer.
    pub kept: Vec<Vec<usize>>,
    pub head: Option<Head>,
}

impl SlicedModule {
    /// Per-kernel retention over the parent, flattened in layer order.
    pub fn retained_bits(&self, parent_widths: &[usize]) -> Vec<bool> {
        let mut out = Vec::new();
        for (kept, &w) in self.kept.iter().zip(parent_widths) {
            let mut row = vec![false; w];
            kept.iter().for_each(|&k| row[k] = true);
            out.extend(row);
        }
        out
    }

    pub fn retained_kernels(&self) -> usize {
        self.kept.iter().map(Vec::len).sum()
    }

    /// Recognition score per image: the head's sigmoid output when present,
    /// otherwise the module's own logit for its class.
    pub fn score_logits(&self, logits: &crate::tensor::Matrix) -> Vec<f64> {
        (0..logits.rows)
            .map(|r| match &self.head {
                Some(h) => h.forward(logits.row(r)),
                None => logits.row(r)[self.class_id] as f64,
            })
            .collect()
    }

    pub fn scores(&self, batch: &ImageBatch) -> Result<Vec<f64>> {
        Ok(self.score_logits(&self.net.predict(batch)?))
    }

    /// One-vs-rest decision per image: head output above 0.5, or the class
    /// logit winning the module's own argmax.
    pub fn decisions(&self, batch: &ImageBatch) -> Result<Vec<bool>> {
        let logits = self.net.predict(batch)?;
        Ok(match &self.head {
            Some(h) => (0..logits.rows).map(|r| h.forward(logits.row(r)) > 0.5).collect(),
            None => logits.argmax_rows().into_iter().map(|p| p == self.class_id).collect(),
        })
    }
}

/// Splits a flat per-kernel vector into per-layer slices of `widths`.
pub fn split_by_layer<T: Clone>(flat: &[T], widths: &[usize]) -> Result<Vec<Vec<T>>> {
    let total: usize = widths.iter().sum();
    if flat.len() != total {
        return Err(Error::Decode(format!("retention vector has {} entries, model has {total} kernels", flat.len())));
    }
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        out.push(flat[start..start + w].to_vec());
        start += w;
    }
    Ok(out)
}

/// Slices `tm` down to the kernels marked in `retained` (one entry per kernel,
/// layer-major). Downstream input channels and the first FC layer's inputs
/// are trimmed to match.
pub fn decode(tm: &TrainedModel, class_id: usize, retained: &[bool], head: Option<Head>, provenance: Provenance) -> Result<SlicedModule> {
    let net = &tm.net;
    if class_id >= net.n_classes() {
        return Err(Error::Decode(format!("class {class_id} outside [0, {})", net.n_classes())));
    }
    if let Some(h) = &head {
        if h.n != net.n_classes() {
            return Err(Error::Decode("head width differs from class count".into()));
        }
    }
    let widths: Vec<usize> = net.conv.iter().map(|c| c.out_channels).collect();
    let per_layer = split_by_layer(retained, &widths)?;
    let kept: Vec<Vec<usize>> = per_layer
        .iter()
        .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k).collect())
        .collect();
    for (l, k) in kept.iter().enumerate() {
        if k.is_empty() {
            return Err(Error::Decode(format!("layer {l} retains no kernels")));
        }
    }
    for &(a, b) in &net.spec().residual_pairs {
        if kept[a] != kept[b] {
            return Err(Error::Decode(format!("residual pair ({a}, {b}) retains different kernels")));
        }
    }
    let plan = net.plan();
    let mut spec = net.spec().clone();
    for (cs, k) in spec.conv_layers.iter_mut().zip(&kept) {
        cs.out_kernels = k.len();
    }
    spec.name = format!("{}-module{class_id}", spec.name);

    // kept channels of each stage's concatenated output
    let stage_channels: Vec<Vec<usize>> = plan
        .stages
        .iter()
        .map(|s| s.layers.iter().flat_map(|&l| kept[l].iter().map(move |&k| plan.channel_offset[l] + k)).collect())
        .collect();

    let mut conv = Vec::with_capacity(net.conv.len());
    for (l, p) in net.conv.iter().enumerate() {
        let s = plan.stage_of_layer[l];
        let inputs: Vec<usize> = if s == 0 {
            (0..p.in_channels).collect()
        } else {
            stage_channels[s - 1].clone()
        };
        let kk = p.kernel * p.kernel;
        let mut weight = Vec::with_capacity(kept[l].len() * inputs.len() * kk);
        for &o in &kept[l] {
            let row = &p.weight[o * p.patch_len()..(o + 1) * p.patch_len()];
            for &i in &inputs {
                weight.extend_from_slice(&row[i * kk..(i + 1) * kk]);
            }
        }
        conv.push(ConvParams {
            out_channels: kept[l].len(),
            in_channels: inputs.len(),
            kernel: p.kernel,
            weight,
            bias: kept[l].iter().map(|&o| p.bias[o]).collect(),
        });
    }

    let (_, fh, fw) = plan.flatten;
    let plane = fh * fw;
    let last_channels = stage_channels.last().expect("at least one stage");
    let mut fc: Vec<DenseParams> = net.fc.clone();
    let first = &net.fc[0];
    let cols: Vec<usize> = last_channels.iter().flat_map(|&c| c * plane..(c + 1) * plane).collect();
    let mut weight = Vec::with_capacity(first.out_features * cols.len());
    for o in 0..first.out_features {
        let row = &first.weight[o * first.in_features..(o + 1) * first.in_features];
        weight.extend(cols.iter().map(|&c| row[c]));
    }
    fc[0] = DenseParams {
        in_features: cols.len(),
        out_features: first.out_features,
        weight,
        bias: first.bias.clone(),
    };
    let sliced = Network::from_parts(spec, conv, fc, net.norm.clone())?;
    Ok(SlicedModule {
        parent_hash: tm.hash(),
        class_id,
        provenance,
        net: sliced,
        kept,
        head,
    })
}

/// Masks in the `0/1` scaling form the masked forward pass expects.
pub fn masks_from_retained(retained: &[bool], widths: &[usize]) -> Result<Vec<Vec<f32>>> {
    Ok(split_by_layer(retained, widths)?
        .into_iter()
        .map(|row| row.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_model, ArchitectureSpec, ConvSpec, InputShape};

    #[test]
    fn small_two_layer_trim() {
        // first layer has 3 kernels; dropping its kernel 1 leaves the second
        // layer's kernels with 2 input channels of 3x3
        let spec = ArchitectureSpec {
            name: "fig".into(),
            input: InputShape {
                channels: 1,
                height: 6,
                width: 6,
            },
            conv_layers: vec![ConvSpec::same(3, 3), ConvSpec::same(2, 3)],
            pool_points: vec![],
            fc_layers: vec![],
            residual_pairs: vec![],
            branch_groups: vec![],
            n_classes: 2,
        };
        let tm = build_model(spec, 0).unwrap();
        let m = decode(&tm, 0, &[true, false, true, true, true], None, Provenance::Ga).unwrap();
        assert_eq!(m.net.conv[1].in_channels, 2);
        assert_eq!(m.net.conv[1].weight.len(), 2 * 2 * 3 * 3);
        assert_eq!(m.net.conv[0].out_channels, 2);
    }

    #[test]
    fn empty_layer_and_residual_mismatch_rejected() {
        let tm = build_model(ArchitectureSpec::desk_res(4), 0).unwrap();
        let l = tm.spec().total_kernels();
        let mut bits = vec![true; l];
        bits[16..32].fill(false);
        let err = decode(&tm, 0, &bits, None, Provenance::Ga).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
        let mut bits = vec![true; l];
        bits[3] = false;
        let err = decode(&tm, 0, &bits, None, Provenance::Ga).unwrap_err();
        assert!(err.to_string().contains("(0, 2)"), "{err}");
    }

    fn random_bits(tm: &TrainedModel, seed: u64) -> Vec<bool> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let plan = tm.net.plan();
        let widths: Vec<usize> = tm.net.conv.iter().map(|c| c.out_channels).collect();
        // one draw per segment leader so residual partners agree
        let mut per_layer: Vec<Vec<bool>> = vec![Vec::new(); widths.len()];
        for seg in &plan.segments {
            let w = widths[seg[0]];
            let mut row: Vec<bool> = (0..w).map(|_| rng.random_bool(0.6)).collect();
            row[rng.random_range(0..w)] = true;
            for &l in seg {
                per_layer[l] = row.clone();
            }
        }
        per_layer.concat()
    }

    #[test]
    fn sliced_matches_masked_for_each_family() {
        use crate::datasets::gen_synthetic;
        let data = gen_synthetic(4, 8, 16, 3).unwrap();
        let batch = data.full_batch();
        for spec in [ArchitectureSpec::desk_plain(4), ArchitectureSpec::desk_res(4), ArchitectureSpec::desk_ince(4)] {
            let tm = build_model(spec, 5).unwrap();
            let widths: Vec<usize> = tm.net.conv.iter().map(|c| c.out_channels).collect();
            for seed in 0..3 {
                let bits = random_bits(&tm, seed);
                let m = decode(&tm, 1, &bits, None, Provenance::Grad).unwrap();
                let masks = masks_from_retained(&bits, &widths).unwrap();
                let masked = tm.net.predict_masked(&batch, Some(&masks)).unwrap();
                let sliced = m.net.predict(&batch).unwrap();
                for (a, b) in sliced.data.iter().zip(&masked.data) {
                    assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{} {a} vs {b}", tm.spec().name);
                }
                assert_eq!(m.retained_bits(&widths), bits);
            }
        }
    }

    #[test]
    fn all_ones_is_identity() {
        use crate::datasets::gen_synthetic;
        let data = gen_synthetic(4, 10, 16, 4).unwrap();
        let tm = build_model(ArchitectureSpec::desk_ince(4), 2).unwrap();
        let m = decode(&tm, 0, &vec![true; tm.spec().total_kernels()], None, Provenance::Ga).unwrap();
        let batch = data.full_batch();
        assert_eq!(m.net.predict(&batch).unwrap(), tm.net.predict(&batch).unwrap());
    }
}
