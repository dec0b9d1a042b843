use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::GradConfig;
use super::head::{Head, HeadGrad};
use super::masks::{ste, MaskSet};
use super::optim::OptimState;
use crate::composer::{decode, Provenance, SlicedModule};
use crate::datasets::{ImageBatch, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::{softmax, Matrix};
use crate::zoo::{Tape, TrainedModel, PREDICT_CHUNK};

/// Masks and heads being trained.
#[derive(Clone, Debug, PartialEq)]
pub struct GradState {
    pub masks: MaskSet,
    pub heads: Vec<Head>,
}

impl GradState {
    pub fn init(tm: &TrainedModel, rng: &mut ChaCha8Rng) -> Self {
        let n = tm.net.n_classes();
        let widths: Vec<usize> = tm.net.conv.iter().map(|c| c.out_channels).collect();
        let masks = MaskSet::init(n, tm.net.plan(), &widths, rng);
        let heads = (0..n).map(|_| Head::new(n, rng)).collect();
        Self { masks, heads }
    }

    pub fn n(&self) -> usize {
        self.heads.len()
    }
}

/// Module probabilities, row-major `B×N`: head `n` applied to the TM masked by `Bin(mask_n)`.
pub fn forward(state: &GradState, tm: &TrainedModel, batch: &ImageBatch) -> Result<Vec<f64>> {
    let n = state.n();
    let mut out = vec![0.0; batch.len * n];
    for start in (0..batch.len).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(batch.len);
        let part = batch.slice(start, end);
        let prepared = tm.net.prepare(&part)?;
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let logits = tm.net.forward_with(&prepared, Some(&state.masks.layer_masks(k)), None)?;
                Ok((0..logits.rows).map(|r| state.heads[k].forward(logits.row(r))).collect())
            })
            .collect::<Result<_>>()?;
        for (k, col) in cols.into_iter().enumerate() {
            for (r, v) in col.into_iter().enumerate() {
                out[(start + r) * n + k] = v;
            }
        }
    }
    Ok(out)
}

/// Cross-entropy of the softmax-normalized module outputs, and `dloss/dpred`.
fn classification_loss(pred: &[f64], n: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let b = labels.len();
    let mut grad = vec![0.0; pred.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let s = softmax(&pred[r * n..(r + 1) * n]);
        loss -= s[y].ln();
        for k in 0..n {
            grad[r * n + k] = (s[k] - if k == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, grad)
}

/// `(loss1, loss2)`: classification loss and the retained-kernel fraction.
pub fn losses(pred: &[f64], labels: &[usize], masks: &MaskSet) -> (f64, f64) {
    let n = masks.masks.len();
    (classification_loss(pred, n, labels).0, masks.retained_fraction())
}

/// Gradients of one step.
#[derive(Clone, Debug)]
pub struct StepGrads {
    pub loss1: f64,
    pub loss2: f64,
    pub heads: Vec<HeadGrad>,
    /// Per module, the clipped straight-through gradient of every mask entry.
    /// Absent in head-only steps.
    pub masks: Option<Vec<Vec<f64>>>,
}

impl StepGrads {
    pub fn is_finite(&self) -> bool {
        self.loss1.is_finite()
            && self.heads.iter().all(HeadGrad::is_finite)
            && self.masks.iter().flatten().flatten().all(|v| v.is_finite())
    }
}

/// Forward and backward over one batch. With `joint`, mask gradients include
/// `penalty` times the retained-fraction term.
pub fn gradients(state: &GradState, tm: &TrainedModel, batch: &ImageBatch, labels: &[usize], joint: bool, penalty: f64) -> Result<StepGrads> {
    let n = state.n();
    let prepared = tm.net.prepare(batch)?;
    let traced: Vec<(Vec<Vec<f32>>, Tape, Matrix)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let masks = state.masks.layer_masks(k);
            let mut tape = Tape::default();
            let logits = tm.net.forward_with(&prepared, Some(&masks), joint.then_some(&mut tape))?;
            Ok((masks, tape, logits))
        })
        .collect::<Result<_>>()?;
    let b = batch.len;
    let mut pred = vec![0.0; b * n];
    let mut traces = Vec::with_capacity(n);
    for (k, (_, _, logits)) in traced.iter().enumerate() {
        let t: Vec<_> = (0..b).map(|r| state.heads[k].trace(logits.row(r))).collect();
        for (r, tr) in t.iter().enumerate() {
            pred[r * n + k] = tr.out;
        }
        traces.push(t);
    }
    let (loss1, dpred) = classification_loss(&pred, n, labels);
    let total = state.masks.n_kernels();
    let plan = tm.net.plan();
    let offsets = state.masks.offsets();
    let per_module: Vec<(HeadGrad, Option<Vec<f64>>)> = traced
        .into_par_iter()
        .zip(traces)
        .enumerate()
        .map(|(k, ((masks, tape, logits), trace))| {
            let head = &state.heads[k];
            let mut hg = HeadGrad::zeros(n);
            let mut dlogits = Matrix::zeros(b, n);
            for r in 0..b {
                let dx = head.backward(logits.row(r), &trace[r], dpred[r * n + k], &mut hg);
                dlogits.row_mut(r).iter_mut().zip(dx).for_each(|(d, v)| *d = v as f32);
            }
            if !joint {
                return (hg, None);
            }
            let (_, gz) = tm.net.backward(&tape, &dlogits, Some(&masks), false);
            let gz = gz.expect("masked forward yields mask gradients");
            let unit = penalty / (n * total) as f64;
            let mut g = vec![0.0; total];
            for seg in &plan.segments {
                let w = state.masks.widths[seg[0]];
                for i in 0..w {
                    let raw: f64 = seg.iter().map(|&l| gz[l][i] as f64 + unit).sum();
                    let clipped = ste(raw);
                    for &l in seg {
                        g[offsets[l] + i] = clipped;
                    }
                }
            }
            (hg, Some(g))
        })
        .collect();
    let (heads, masks): (Vec<_>, Vec<_>) = per_module.into_iter().unzip();
    Ok(StepGrads {
        loss1,
        loss2: state.masks.retained_fraction(),
        heads,
        masks: if joint { Some(masks.into_iter().map(|m| m.expect("joint step")).collect()) } else { None },
    })
}

/// CM accuracy: argmax over module probabilities.
pub fn cm_accuracy(state: &GradState, tm: &TrainedModel, data: &LabeledDataset) -> Result<f64> {
    let n = state.n();
    let pred = forward(state, tm, &data.full_batch())?;
    let hits = pred
        .chunks(n)
        .zip(data.labels())
        .filter(|(row, &y)| crate::composer::argmax_f64(row) == y)
        .count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub joint: bool,
    pub loss1: f64,
    pub loss2: f64,
    pub valid_acc: f64,
    pub retained: f64,
}

/// The selected snapshot and the full epoch log.
#[derive(Clone, Debug, PartialEq)]
pub struct GradResult {
    pub parent_hash: String,
    pub widths: Vec<usize>,
    /// `Bin(mask_n)` of the selected epoch.
    pub retained: Vec<Vec<bool>>,
    pub heads: Vec<Head>,
    pub selected_epoch: usize,
    pub log: Vec<EpochRecord>,
}

impl GradResult {
    pub fn retained_fraction(&self) -> f64 {
        let kept: usize = self.retained.iter().map(|r| r.iter().filter(|&&b| b).count()).sum();
        kept as f64 / self.retained.iter().map(Vec::len).sum::<usize>().max(1) as f64
    }

    pub fn selected(&self) -> &EpochRecord {
        &self.log[self.selected_epoch]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,joint,loss1,loss2,valid_acc,retained\n");
        for r in &self.log {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.joint as u8, r.loss1, r.loss2, r.valid_acc, r.retained
            ));
        }
        s
    }

    /// Physically sliced modules with their heads attached.
    pub fn modules(&self, tm: &TrainedModel) -> Result<Vec<SlicedModule>> {
        self.retained
            .iter()
            .zip(&self.heads)
            .enumerate()
            .map(|(k, (bits, head))| decode(tm, k, bits, Some(head.clone()), Provenance::Grad))
            .collect()
    }
}

fn flat_head_grad(g: &HeadGrad) -> Vec<f64> {
    let mut v = Vec::with_capacity(g.w1.len() + g.b1.len() + g.w2.len() + 1);
    v.extend(&g.w1);
    v.extend(&g.b1);
    v.extend(&g.w2);
    v.push(g.b2);
    v
}

/// Trains masks and heads, returning the epoch with the best validation accuracy
/// (fewest retained kernels on ties).
pub fn split(tm: &TrainedModel, train: &LabeledDataset, valid: &LabeledDataset, cfg: &GradConfig) -> Result<GradResult> {
    cfg.validate()?;
    let n = tm.net.n_classes();
    for (name, ds) in [("train", train), ("valid", valid)] {
        if ds.n_classes() != n {
            return Err(Error::ClassSpace(format!("{name} data has {} classes, model has {n}", ds.n_classes())));
        }
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::arg("train and valid data must be nonempty"));
    }
    let actions = cfg.actions();
    let batch_size = cfg
        .batch_size
        .or(tm.train_config.as_ref().map(|c| c.batch_size))
        .unwrap_or(32);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = GradState::init(tm, &mut rng);
    let l = state.masks.n_kernels();
    let mut head_opt: Vec<OptimState> = state.heads.iter().map(|h| OptimState::new(cfg.optimizer, h.param_count())).collect();
    let mut mask_opt: Vec<OptimState> = (0..n).map(|_| OptimState::new(cfg.optimizer, l)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Vec<Vec<bool>>, Vec<Head>)> = None;

    for (epoch, &joint) in actions.iter().enumerate() {
        order.shuffle(&mut rng);
        let mut loss1 = 0.0;
        let mut batches = 0;
        for (bi, idx) in order.chunks(batch_size).enumerate() {
            let batch = train.batch(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.label(i)).collect();
            let g = gradients(&state, tm, &batch, &labels, joint, cfg.beta)?;
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    epoch,
                    batch: bi,
                });
            }
            loss1 += g.loss1;
            batches += 1;
            for (k, hg) in g.heads.iter().enumerate() {
                let mut p = state.heads[k].params();
                head_opt[k].apply(&mut p, &flat_head_grad(hg), cfg.head_lr());
                state.heads[k] = Head::from_params(n, &p).expect("same size");
            }
            if let Some(mg) = &g.masks {
                for (k, grad) in mg.iter().enumerate() {
                    mask_opt[k].apply(&mut state.masks.masks[k], grad, cfg.mask_lr());
                }
                state.masks.tie(tm.net.plan());
            }
        }
        let valid_acc = cm_accuracy(&state, tm, valid)?;
        let retained = state.masks.retained_fraction();
        log.push(EpochRecord {
            epoch,
            joint,
            loss1: loss1 / batches.max(1) as f64,
            loss2: retained,
            valid_acc,
            retained,
        });
        let better = match &best {
            None => true,
            Some((acc, ret, ..)) => valid_acc > *acc || (valid_acc == *acc && retained < *ret),
        };
        if better {
            let bits = (0..n).map(|k| state.masks.binarized(k)).collect();
            best = Some((valid_acc, retained, epoch, bits, state.heads.clone()));
        }
        if epoch + 1 == cfg.heads_deadline {
            let b = best.as_ref().map_or(0.0, |b| b.0);
            if b <= 1.5 / n as f64 {
                return Err(Error::HeadsFailed { best: b, epochs: epoch + 1 });
            }
        }
    }
    let Some((_, _, selected_epoch, retained, heads)) = best else {
        return Err(Error::Config("grad split needs at least one epoch".into()));
    };
    Ok(GradResult {
        parent_hash: tm.hash(),
        widths: state.masks.widths.clone(),
        retained,
        heads,
        selected_epoch,
        log,
    })
}
