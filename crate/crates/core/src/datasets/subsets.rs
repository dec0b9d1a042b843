use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, SplitTag};
use crate::error::{Error, Result};

/// Default mean sampling fraction `s` in `p = min(1, N·s·q)`.
pub const DEFAULT_MEAN_FRACTION: f64 = 0.5;
const MAX_RESAMPLES: usize = 100_000;

/// Per-subset, per-class sampling proportions drawn from a Dirichlet prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetPlan {
    pub subsets: usize,
    /// `proportions[j][n]` is the share of class `n` drawn into subset `j`.
    pub proportions: Vec<Vec<f64>>,
    pub concentration: f64,
    pub mean_fraction: f64,
    pub seed: u64,
    pub threshold: usize,
}

fn draw_dirichlet(gamma: &Gamma<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // tiny concentrations can underflow every component
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

/// Draws `subsets` class-imbalanced subsets of `dataset`.
///
/// For each subset a class distribution `q ~ Dir(concentration·1)` is drawn
/// and turned into proportions `p_n = min(1, N·s·q_n)`. Any entry with
/// `p_n·|D_n| < threshold` is redrawn from a fresh Dirichlet sample until it
/// clears the threshold. Subset `j` then holds `round(p_n·|D_n|)` samples of
/// class `n`, drawn without replacement; different subsets may overlap.
pub fn dirichlet_subsets(
    dataset: &LabeledDataset,
    subsets: usize,
    concentration: f64,
    threshold: usize,
    seed: u64,
) -> Result<(SubsetPlan, Vec<LabeledDataset>)> {
    dirichlet_subsets_with(dataset, subsets, concentration, threshold, DEFAULT_MEAN_FRACTION, seed)
}

pub fn dirichlet_subsets_with(
    dataset: &LabeledDataset,
    subsets: usize,
    concentration: f64,
    threshold: usize,
    mean_fraction: f64,
    seed: u64,
) -> Result<(SubsetPlan, Vec<LabeledDataset>)> {
    if subsets == 0 {
        return Err(Error::arg("need at least one subset"));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::arg("concentration must be positive"));
    }
    if !(mean_fraction > 0.0 && mean_fraction <= 1.0) {
        return Err(Error::arg("mean fraction must lie in (0, 1]"));
    }
    let counts = dataset.counts_per_class();
    if let Some((class, &have)) = counts.iter().enumerate().find(|(_, &c)| c < threshold) {
        return Err(Error::arg(format!(
            "threshold {threshold} impossible: class {class} has only {have} samples"
        )));
    }
    let n = dataset.n_classes();
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = n as f64 * mean_fraction;
    let mut proportions = Vec::with_capacity(subsets);
    for _ in 0..subsets {
        let q = draw_dirichlet(&gamma, n, &mut rng);
        let mut p: Vec<f64> = q.iter().map(|&q| (scale * q).min(1.0)).collect();
        for class in 0..n {
            let mut tries = 0;
            while p[class] * (counts[class] as f64) < threshold as f64 || p[class] <= 0.0 {
                tries += 1;
                if tries > MAX_RESAMPLES {
                    return Err(Error::arg(format!(
                        "could not satisfy threshold {threshold} for class {class}"
                    )));
                }
                p[class] = (scale * draw_dirichlet(&gamma, n, &mut rng)[class]).min(1.0);
            }
        }
        proportions.push(p);
    }

    let by_class: Vec<Vec<usize>> = (0..n).map(|c| dataset.indices_of_class(c)).collect();
    let mut out = Vec::with_capacity(subsets);
    for p in &proportions {
        let mut chosen = Vec::new();
        for (class, pool) in by_class.iter().enumerate() {
            let take = ((p[class] * pool.len() as f64).round() as usize).clamp(1, pool.len());
            let mut pool = pool.clone();
            pool.shuffle(&mut rng);
            pool.truncate(take);
            chosen.extend(pool);
        }
        chosen.sort_unstable();
        out.push(dataset.subset(&chosen, dataset.split_tag));
    }
    let plan = SubsetPlan {
        subsets,
        proportions,
        concentration,
        mean_fraction,
        seed,
        threshold,
    };
    Ok((plan, out))
}

/// Splits `dataset` into disjoint parts with the given fractions.
///
/// Part sizes come from rounding the cumulative fractions, so the parts always
/// cover the input exactly. With `stratified` the rounding is done per class.
/// Samples keep their original relative order inside each part.
pub fn split_ratio(dataset: &LabeledDataset, fractions: &[f64], seed: u64, stratified: bool) -> Result<Vec<LabeledDataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::arg("fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("fractions sum to {total}, expected 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: Vec<Vec<usize>> = if stratified {
        (0..dataset.n_classes()).map(|c| dataset.indices_of_class(c)).collect()
    } else {
        vec![(0..dataset.len()).collect()]
    };
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for mut pool in pools {
        pool.shuffle(&mut rng);
        let n = pool.len() as f64;
        let mut cum = 0.0;
        let mut start = 0;
        for (k, f) in fractions.iter().enumerate() {
            cum += f;
            let end = if k + 1 == fractions.len() {
                pool.len()
            } else {
                ((cum * n).round() as usize).min(pool.len())
            };
            parts[k].extend_from_slice(&pool[start..end.max(start)]);
            start = end.max(start);
        }
    }
    Ok(parts
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            dataset.subset(&idx, dataset.split_tag)
        })
        .collect())
}

/// Stratified 8:2 split, e.g. train/valid or test/module-eval.
pub fn split_pair(dataset: &LabeledDataset, seed: u64, tags: (SplitTag, SplitTag)) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut parts = split_ratio(dataset, &[0.8, 0.2], seed, true)?;
    let second = parts.pop().unwrap().with_tag(tags.1);
    let first = parts.pop().unwrap().with_tag(tags.0);
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_synthetic;
    use proptest::prelude::*;

    fn fixture(per_class: usize) -> LabeledDataset {
        gen_synthetic(4, per_class, 8, 3).unwrap()
    }

    #[test]
    fn eight_two_split_counts() {
        let ds = gen_synthetic(10, 1000, 4, 1).unwrap();
        let parts = split_ratio(&ds, &[0.8, 0.2], 9, false).unwrap();
        assert_eq!(parts[0].len(), 8000);
        assert_eq!(parts[1].len(), 2000);
        let strat = split_ratio(&ds, &[0.8, 0.2], 9, true).unwrap();
        assert_eq!(strat[0].counts_per_class(), vec![800; 10]);
    }

    #[test]
    fn single_fraction_is_identity() {
        let ds = fixture(10);
        let parts = split_ratio(&ds, &[1.0], 4, true).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], ds);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(split_ratio(&fixture(5), &[0.5, 0.4], 0, false).is_err());
    }

    #[test]
    fn threshold_respected() {
        let ds = fixture(400);
        let (plan, subsets) = dirichlet_subsets(&ds, 10, 1.0, 100, 11).unwrap();
        for (p, s) in plan.proportions.iter().zip(&subsets) {
            for (c, &count) in s.counts_per_class().iter().enumerate() {
                assert!(count >= 100, "class {c}: {count}");
                assert_eq!(count, (p[c] * 400.0).round() as usize);
                assert!(p[c] > 0.0 && p[c] <= 1.0);
            }
        }
    }

    #[test]
    fn huge_concentration_is_near_uniform() {
        let ds = fixture(50);
        let (plan, _) = dirichlet_subsets(&ds, 1, 1e6, 1, 5).unwrap();
        let p = &plan.proportions[0];
        let spread = p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.05, "{p:?}");
    }

    #[test]
    fn impossible_threshold_rejected() {
        let ds = fixture(50);
        let err = dirichlet_subsets(&ds, 2, 1.0, 100, 0).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn reproducible_plan() {
        let ds = fixture(100);
        let a = dirichlet_subsets(&ds, 3, 0.5, 10, 42).unwrap();
        let b = dirichlet_subsets(&ds, 3, 0.5, 10, 42).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn imbalance_decreases_with_concentration() {
        let ds = fixture(200);
        let mean_ratio = |c: f64| {
            let mut acc = 0.0;
            for seed in 0..100 {
                let (plan, _) = dirichlet_subsets(&ds, 1, c, 1, seed).unwrap();
                let p = &plan.proportions[0];
                let max = p.iter().cloned().fold(f64::MIN, f64::max);
                let min = p.iter().cloned().fold(f64::MAX, f64::min);
                acc += max / min;
            }
            acc / 100.0
        };
        assert!(mean_ratio(0.5) > mean_ratio(5.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn splits_are_disjoint_and_exhaustive(seed in 0u64..1000, a in 1u32..8, b in 1u32..8, strat: bool) {
            // tag every image with its index so parts can be traced back
            let n = 37;
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let images: Vec<u8> = (0..n as u8).collect();
            let ds = LabeledDataset::new((1, 1, 1), images, labels, vec!["x".into(), "y".into(), "z".into()], SplitTag::Train).unwrap();
            let total = (a + b) as f64;
            let parts = split_ratio(&ds, &[a as f64 / total, b as f64 / total], seed, strat).unwrap();
            let mut seen: Vec<u8> = parts.iter().flat_map(|p| p.pixels().to_vec()).collect();
            prop_assert_eq!(seen.len(), n);
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n);
        }
    }
}
