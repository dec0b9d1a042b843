//! Kernel importance, importance-ordered kernel grouping and per-layer
//! sensitivity to kernel removal.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;
use crate::zoo::{accuracy, TrainedModel};

/// Default cap on the samples per class used for importance.
pub const DEFAULT_M_CAP: usize = 1000;
const BATCH: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationPoint {
    /// Raw convolution output, bias included.
    #[default]
    PreActivation,
    /// ReLU of the raw convolution output (residual input not added).
    PostActivation,
}

/// Mean per-sample feature-map sum of every kernel, per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub model_hash: String,
    pub point: ActivationPoint,
    /// Samples used per class.
    pub samples: BTreeMap<usize, usize>,
    /// `scores[class][layer][kernel]`
    pub scores: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl ImportanceTable {
    pub fn class(&self, class_id: usize) -> Result<&Vec<Vec<f64>>> {
        self.scores
            .get(&class_id)
            .ok_or_else(|| Error::arg(format!("importance table has no scores for class {class_id}")))
    }

    /// Class-agnostic importance: the mean over every class in the table.
    pub fn mean(&self) -> Vec<Vec<f64>> {
        let mut it = self.scores.values();
        let first = it.next().expect("table covers at least one class").clone();
        let n = self.scores.len() as f64;
        let mut acc = first;
        for s in it {
            for (a, b) in acc.iter_mut().zip(s) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        acc.iter_mut().for_each(|l| l.iter_mut().for_each(|x| *x /= n));
        acc
    }
}

fn pick_samples(train: &LabeledDataset, class_id: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if class_id >= train.n_classes() {
        return Err(Error::arg(format!("class {class_id} outside [0, {})", train.n_classes())));
    }
    let mut pool = train.indices_of_class(class_id);
    if m == 0 || m > pool.len() {
        return Err(Error::arg(format!(
            "m = {m} but class {class_id} has {} training samples",
            pool.len()
        )));
    }
    if m < pool.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ class_id as u64);
        pool.shuffle(&mut rng);
        pool.truncate(m);
        pool.sort_unstable();
    }
    Ok(pool)
}

fn accumulate(z: &FeatureMap, point: ActivationPoint, out: &mut [f64]) {
    for (c, slot) in out.iter_mut().enumerate() {
        let s: f64 = match point {
            ActivationPoint::PreActivation => z.channel(c).iter().map(|&v| v as f64).sum(),
            ActivationPoint::PostActivation => z.channel(c).iter().map(|&v| v.max(0.0) as f64).sum(),
        };
        *slot += s;
    }
}

fn class_scores(tm: &TrainedModel, train: &LabeledDataset, idx: &[usize], point: ActivationPoint) -> Result<Vec<Vec<f64>>> {
    let net = &tm.net;
    let mut sums: Vec<Vec<f64>> = net.conv.iter().map(|c| vec![0.0; c.out_channels]).collect();
    for chunk in idx.chunks(BATCH) {
        let x = net.input_map(&train.batch(chunk))?;
        let mut probe = |layer: usize, z: &FeatureMap| accumulate(z, point, &mut sums[layer]);
        net.forward(&x, None, None, Some(&mut probe));
    }
    let m = idx.len() as f64;
    sums.iter_mut().for_each(|l| l.iter_mut().for_each(|v| *v /= m));
    Ok(sums)
}

/// Importance of every kernel for one class: the mean over `m` class samples
/// of the sum of all values in that kernel's feature map.
pub fn kernel_importance(tm: &TrainedModel, train: &LabeledDataset, class_id: usize, m: usize, seed: u64) -> Result<ImportanceTable> {
    importance_for(tm, train, &[class_id], Some(m), seed, ActivationPoint::default())
}

/// Importance for several classes. `m = None` uses every class sample up to
/// [`DEFAULT_M_CAP`].
pub fn importance_for(
    tm: &TrainedModel,
    train: &LabeledDataset,
    classes: &[usize],
    m: Option<usize>,
    seed: u64,
    point: ActivationPoint,
) -> Result<ImportanceTable> {
    let mut samples = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for &c in classes {
        let want = m.unwrap_or_else(|| train.indices_of_class(c).len().min(DEFAULT_M_CAP));
        let idx = pick_samples(train, c, want, seed)?;
        samples.insert(c, idx.len());
        scores.insert(c, class_scores(tm, train, &idx, point)?);
    }
    Ok(ImportanceTable {
        model_hash: tm.hash(),
        point,
        samples,
        scores,
    })
}

pub fn importance_all(tm: &TrainedModel, train: &LabeledDataset, m: Option<usize>, seed: u64) -> Result<ImportanceTable> {
    let classes: Vec<usize> = (0..tm.net.n_classes()).collect();
    importance_for(tm, train, &classes, m, seed, ActivationPoint::default())
}

/// How many groups a segment of a given width is cut into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "groups")]
pub enum GroupRule {
    /// 10 groups below 256 kernels, 100 groups otherwise.
    Paper,
    Fixed(usize),
}

impl Default for GroupRule {
    fn default() -> Self {
        GroupRule::Fixed(8)
    }
}

impl GroupRule {
    pub fn groups_for(self, width: usize) -> usize {
        let g = match self {
            GroupRule::Paper if width < 256 => 10,
            GroupRule::Paper => 100,
            GroupRule::Fixed(g) => g.max(1),
        };
        g.min(width)
    }
}

/// Splits `ids` (already ordered) into `g` contiguous chunks whose sizes
/// differ by at most one, larger chunks first.
pub fn chunk(ids: &[usize], g: usize) -> Vec<Vec<usize>> {
    let g = g.clamp(1, ids.len().max(1));
    let base = ids.len() / g;
    let extra = ids.len() % g;
    let mut out = Vec::with_capacity(g);
    let mut start = 0;
    for i in 0..g {
        let len = base + usize::from(i < extra);
        out.push(ids[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Kernel groups of one genome segment: a layer, or a set of layers tied by
/// residual connections that share one kernel index space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentGroups {
    pub layers: Vec<usize>,
    pub width: usize,
    /// Kernel ids per group, by descending importance.
    pub groups: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub model_hash: String,
    /// `None` for a class-agnostic plan.
    pub class_id: Option<usize>,
    pub rule: GroupRule,
    pub segments: Vec<SegmentGroups>,
}

impl GroupingPlan {
    /// Genome length: one bit per group.
    pub fn n_bits(&self) -> usize {
        self.segments.iter().map(|s| s.groups.len()).sum()
    }

    pub fn segment_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.segments
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.groups.len();
                o
            })
            .collect()
    }

    /// Per-layer kernel retention implied by one bit per group.
    pub fn retained(&self, bits: &[bool], n_layers: usize) -> Result<Vec<Vec<bool>>> {
        if bits.len() != self.n_bits() {
            return Err(Error::Decode(format!("genome has {} bits, plan needs {}", bits.len(), self.n_bits())));
        }
        let mut out: Vec<Vec<bool>> = vec![Vec::new(); n_layers];
        let mut bit = 0;
        for seg in &self.segments {
            let mut keep = vec![false; seg.width];
            for g in &seg.groups {
                if bits[bit] {
                    g.iter().for_each(|&k| keep[k] = true);
                }
                bit += 1;
            }
            for &l in &seg.layers {
                out[l] = keep.clone();
            }
        }
        Ok(out)
    }
}

/// Sorts each segment's kernels by descending importance (summed over tied
/// layers) and chunks them into groups.
pub fn group_by_scores(tm: &TrainedModel, scores: &[Vec<f64>], class_id: Option<usize>, rule: GroupRule) -> GroupingPlan {
    let plan = tm.net.plan();
    let segments = plan
        .segments
        .iter()
        .map(|layers| {
            let width = tm.net.conv[layers[0]].out_channels;
            let mut total = vec![0.0; width];
            for &l in layers {
                total.iter_mut().zip(&scores[l]).for_each(|(t, s)| *t += s);
            }
            let mut ids: Vec<usize> = (0..width).collect();
            // stable: equal scores keep index order
            ids.sort_by(|&a, &b| total[b].total_cmp(&total[a]));
            SegmentGroups {
                layers: layers.clone(),
                width,
                groups: chunk(&ids, rule.groups_for(width)),
            }
        })
        .collect();
    GroupingPlan {
        model_hash: tm.hash(),
        class_id,
        rule,
        segments,
    }
}

pub fn group_kernels(tm: &TrainedModel, importance: &ImportanceTable, class_id: usize, rule: GroupRule) -> Result<GroupingPlan> {
    Ok(group_by_scores(tm, importance.class(class_id)?, Some(class_id), rule))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    Sensitive,
    Insensitive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub model_hash: String,
    pub base_acc: f64,
    pub drop_ratios: Vec<f64>,
    pub threshold: f64,
    /// One label per conv layer; tied layers share their segment's label.
    pub labels: Vec<Sensitivity>,
    /// `acc_curve[segment][ratio]`
    pub acc_curve: Vec<Vec<f64>>,
    pub segments: Vec<Vec<usize>>,
}

impl SensitivityProfile {
    /// Labels under a different threshold, from the stored curves.
    pub fn relabel(&self, threshold: f64) -> Vec<Sensitivity> {
        let seg_labels: Vec<Sensitivity> = self.acc_curve.iter().map(|c| label_for(self.base_acc, c, threshold)).collect();
        let mut labels = vec![Sensitivity::Sensitive; self.labels.len()];
        for (seg, layers) in self.segments.iter().enumerate() {
            for &l in layers {
                labels[l] = seg_labels[seg];
            }
        }
        labels
    }
}

pub const DEFAULT_DROP_RATIOS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn label_for(base: f64, curve: &[f64], threshold: f64) -> Sensitivity {
    // the curve's last entry is the largest drop ratio
    let loss = base - curve.last().copied().unwrap_or(base);
    if loss <= threshold {
        Sensitivity::Insensitive
    } else {
        Sensitivity::Sensitive
    }
}

/// Removes the lowest-importance fraction of each segment in isolation and
/// records validation accuracy. A segment is insensitive iff the accuracy
/// loss at the largest drop ratio is within `threshold`.
pub fn layer_sensitivity(
    tm: &TrainedModel,
    valid: &LabeledDataset,
    mean_importance: &[Vec<f64>],
    drop_ratios: &[f64],
    threshold: f64,
) -> Result<SensitivityProfile> {
    if drop_ratios.is_empty() || drop_ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(Error::arg("drop ratios must lie in (0, 1)"));
    }
    if threshold < 0.0 {
        return Err(Error::arg("threshold must be non-negative"));
    }
    let mut ratios = drop_ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    let net = &tm.net;
    let batch = valid.full_batch();
    let base_acc = net.accuracy(valid)?;
    let order = group_by_scores(tm, mean_importance, None, GroupRule::Fixed(1));
    let mut acc_curve = Vec::new();
    for seg in &order.segments {
        let ranked = &seg.groups[0];
        let mut curve = Vec::with_capacity(ratios.len());
        for &r in &ratios {
            let drop = ((r * seg.width as f64).floor() as usize).min(seg.width - 1);
            let mut masks: Vec<Vec<f32>> = net.conv.iter().map(|c| vec![1.0; c.out_channels]).collect();
            for &k in &ranked[seg.width - drop..] {
                for &l in &seg.layers {
                    masks[l][k] = 0.0;
                }
            }
            let pred = net.predict_masked(&batch, Some(&masks))?.argmax_rows();
            curve.push(accuracy(&pred, valid.labels()));
        }
        acc_curve.push(curve);
    }
    let mut profile = SensitivityProfile {
        model_hash: tm.hash(),
        base_acc,
        drop_ratios: ratios,
        threshold,
        labels: vec![Sensitivity::Sensitive; net.conv.len()],
        acc_curve,
        segments: order.segments.iter().map(|s| s.layers.clone()).collect(),
    };
    profile.labels = profile.relabel(threshold);
    Ok(profile)
}
