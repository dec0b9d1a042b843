use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{accuracy, softmax_cross_entropy, Network, Normalization, Tape};
use super::{Metrics, TrainedModel};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Epochs at which the learning rate is multiplied by `lr_gamma`.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub lr_gamma: f32,
    pub weight_decay: f32,
    pub momentum: f32,
    #[serde(default)]
    pub nesterov: bool,
    /// Random crop (zero padding `crop_pad`) and horizontal flip.
    pub augment: bool,
    #[serde(default = "default_pad")]
    pub crop_pad: usize,
    /// Keep the epoch with the best validation accuracy.
    #[serde(default = "default_true")]
    pub keep_best: bool,
    pub seed: u64,
}

pub const TRAIN_CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    TRAIN_CONFIG_VERSION
}
fn default_gamma() -> f32 {
    0.1
}
fn default_pad() -> usize {
    2
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// Small-scale schedule used by the desk fixtures. Augmentation is off:
    /// synthetic classes are defined by blob position, which flips and crops
    /// would scramble.
    pub fn desk(epochs: usize, seed: u64) -> Self {
        Self {
            version: TRAIN_CONFIG_VERSION,
            epochs,
            batch_size: 32,
            lr: 0.01,
            lr_milestones: vec![epochs / 2, epochs * 3 / 4],
            lr_gamma: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            nesterov: true,
            augment: false,
            crop_pad: 2,
            keep_best: true,
            seed,
        }
    }

    /// Full-scale schedule: batch 128, 200 epochs.
    pub fn paper(seed: u64) -> Self {
        Self {
            version: TRAIN_CONFIG_VERSION,
            epochs: 200,
            batch_size: 128,
            lr: 0.1,
            lr_milestones: vec![100, 150],
            lr_gamma: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            nesterov: true,
            augment: true,
            crop_pad: 4,
            keep_best: true,
            seed,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        let drops = self.lr_milestones.iter().filter(|&&m| m > 0 && epoch >= m).count();
        self.lr * self.lr_gamma.powi(drops as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_acc: f64,
}

/// Shifts each sample by up to `pad` pixels (zero fill) and mirrors half of
/// them horizontally.
pub fn augment(x: &mut FeatureMap, pad: usize, rng: &mut ChaCha8Rng) {
    let (h, w) = (x.height, x.width);
    let plane = h * w;
    let mut buf = vec![0f32; plane];
    for b in 0..x.batch {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let flip = rng.random_bool(0.5);
        for c in 0..x.channels {
            let start = (c * x.batch + b) * plane;
            let src = &x.data[start..start + plane];
            for y in 0..h {
                for xx in 0..w {
                    let sy = y as isize + dy;
                    let mut sx = xx as isize + dx;
                    if flip {
                        sx = w as isize - 1 - sx;
                    }
                    buf[y * w + xx] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        src[sy as usize * w + sx as usize]
                    } else {
                        0.0
                    };
                }
            }
            x.data[start..start + plane].copy_from_slice(&buf);
        }
    }
}

fn check_classes(net: &Network, ds: &LabeledDataset) -> Result<()> {
    if ds.n_classes() != net.n_classes() {
        return Err(Error::ClassSpace(format!(
            "dataset has {} classes, model expects {}",
            ds.n_classes(),
            net.n_classes()
        )));
    }
    Ok(())
}

/// Mini-batch SGD with momentum, weight decay and a step learning-rate
/// schedule. Normalization statistics are taken from `train`.
pub fn train(model: TrainedModel, train: &LabeledDataset, valid: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut net = model.net;
    check_classes(&net, train)?;
    check_classes(&net, valid)?;
    if cfg.version != TRAIN_CONFIG_VERSION {
        return Err(Error::Config(format!("unsupported train config version {}", cfg.version)));
    }
    if cfg.epochs == 0 {
        return Ok(TrainedModel {
            net,
            train_config: Some(cfg.clone()),
            metrics: None,
        });
    }
    if cfg.batch_size == 0 || train.is_empty() {
        return Err(Error::arg("batch size and training set must be non-empty"));
    }
    net.norm = Normalization::from_dataset(train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut velocity: Vec<Vec<f32>> = net.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
    // weight decay applies to weights, not biases
    let decays: Vec<bool> = (0..velocity.len()).map(|i| i % 2 == 0).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut tape = Tape::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.batch(idx);
            let mut x = net.input_map(&batch)?;
            if cfg.augment {
                augment(&mut x, cfg.crop_pad, &mut rng);
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train.label(i)).collect();
            let logits = net.forward(&x, None, Some(&mut tape), None);
            let (loss, dl) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    epoch,
                    batch: bi,
                });
            }
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
            let grads = net.backward(&tape, &dl, None, true).0.expect("parameter gradients requested");
            let flat: Vec<&Vec<f32>> = grads
                .conv_w
                .iter()
                .zip(&grads.conv_b)
                .flat_map(|(w, b)| [w, b])
                .chain(grads.fc_w.iter().zip(&grads.fc_b).flat_map(|(w, b)| [w, b]))
                .collect();
            for (((param, g), v), &decay) in net.param_slices_mut().into_iter().zip(flat).zip(&mut velocity).zip(&decays) {
                let wd = if decay { cfg.weight_decay } else { 0.0 };
                for ((p, &gv), vv) in param.iter_mut().zip(g).zip(v.iter_mut()) {
                    let grad = gv + wd * *p;
                    *vv = cfg.momentum * *vv + grad;
                    let step = if cfg.nesterov { grad + cfg.momentum * *vv } else { *vv };
                    *p -= lr * step;
                }
            }
        }
        let valid_acc = net.accuracy(valid)?;
        history.push(EpochStat {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            valid_acc,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| valid_acc > *acc) {
            best = Some((valid_acc, epoch, net.clone()));
        }
    }
    let (best_valid, best_epoch, best_net) = best.expect("at least one epoch");
    let (net, valid_acc, chosen) = if cfg.keep_best {
        (best_net, best_valid, best_epoch)
    } else {
        let last = history.last().unwrap().valid_acc;
        (net, last, cfg.epochs - 1)
    };
    let pred = net.predict_labels(train)?;
    let metrics = Metrics {
        train_acc: accuracy(&pred, train.labels()),
        valid_acc,
        test_acc: None,
        best_epoch: chosen,
        history,
    };
    Ok(TrainedModel {
        net,
        train_config: Some(cfg.clone()),
        metrics: Some(metrics),
    })
}
