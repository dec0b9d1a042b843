use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::zoo::Plan;

/// `1` where the entry is strictly positive.
pub fn bin(x: &[f32]) -> Vec<bool> {
    x.iter().map(|&v| v > 0.0).collect()
}

/// Straight-through gradient: the upstream gradient clipped to `[-1, 1]`.
pub fn ste(upstream: f64) -> f64 {
    upstream.clamp(-1.0, 1.0)
}

/// N real-valued per-kernel masks laid out layer-major over the parent's kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub widths: Vec<usize>,
    pub masks: Vec<Vec<f32>>,
}

impl MaskSet {
    /// Uniform in `(0, 1]`, with residual partners tied to their segment leader.
    pub fn init(n: usize, plan: &Plan, widths: &[usize], rng: &mut impl Rng) -> Self {
        let l: usize = widths.iter().sum();
        let mut set = Self {
            widths: widths.to_vec(),
            masks: (0..n).map(|_| (0..l).map(|_| 1.0 - rng.random::<f32>()).collect()).collect(),
        };
        set.tie(plan);
        set
    }

    pub fn n_kernels(&self) -> usize {
        self.widths.iter().sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.widths.len());
        let mut acc = 0;
        for &w in &self.widths {
            o.push(acc);
            acc += w;
        }
        o
    }

    /// Copies each segment leader's entries onto its partners.
    pub fn tie(&mut self, plan: &Plan) {
        let off = self.offsets();
        for mask in &mut self.masks {
            for seg in &plan.segments {
                let lead = seg[0];
                for &l in &seg[1..] {
                    let (a, b) = (off[lead], off[l]);
                    let w = self.widths[l];
                    let src: Vec<f32> = mask[a..a + w].to_vec();
                    mask[b..b + w].copy_from_slice(&src);
                }
            }
        }
    }

    pub fn binarized(&self, n: usize) -> Vec<bool> {
        bin(&self.masks[n])
    }

    /// `Bin(mask_n)` as per-layer `0/1` multipliers.
    pub fn layer_masks(&self, n: usize) -> Vec<Vec<f32>> {
        let off = self.offsets();
        self.widths
            .iter()
            .zip(off)
            .map(|(&w, o)| self.masks[n][o..o + w].iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    /// Share of retained kernels over all modules.
    pub fn retained_fraction(&self) -> f64 {
        let kept: usize = self.masks.iter().map(|m| m.iter().filter(|&&v| v > 0.0).count()).sum();
        kept as f64 / (self.masks.len() * self.n_kernels()) as f64
    }
}
