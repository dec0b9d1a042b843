use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{GroupingPlan, Sensitivity, SensitivityProfile};

/// One class's individual: a bit per kernel group.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGenome {
    pub class_id: usize,
    pub bits: Vec<bool>,
    pub generation: usize,
    /// Best fitness over the full composed candidates this genome joined.
    pub fitness: Option<f64>,
    /// Best accuracy of a partial (subtask) candidate; orders genomes that
    /// never reached a full candidate.
    pub partial: f64,
}

impl KernelGenome {
    pub fn new(class_id: usize, bits: Vec<bool>, generation: usize) -> Self {
        Self {
            class_id,
            bits,
            generation,
            fitness: None,
            partial: 0.0,
        }
    }

    /// Selection key: genomes with a full fitness first, then by value.
    fn rank_key(&self) -> (bool, f64, f64) {
        (self.fitness.is_some(), self.fitness.unwrap_or(0.0), self.partial)
    }
}

/// `|A ∪ B| − |A ∩ B|` over `|A ∪ B|` of the retained index sets; 0 when both are empty.
pub fn jaccard_distance(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "genome lengths differ");
    let (mut union, mut inter) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        union += usize::from(x || y);
        inter += usize::from(x && y);
    }
    if union == 0 {
        0.0
    } else {
        (union - inter) as f64 / union as f64
    }
}

/// Mean pairwise Jaccard distance; 0 for fewer than two sets.
pub fn diff(sets: &[&[bool]]) -> f64 {
    let n = sets.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += jaccard_distance(sets[i], sets[j]);
        }
    }
    2.0 * total / (n * (n - 1)) as f64
}

pub fn fitness(alpha: f64, acc: f64, diff: f64) -> f64 {
    alpha * acc + (1.0 - alpha) * diff
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Drop-ratio ranges for the initial population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    pub sensitive: (f64, f64),
    pub insensitive: (f64, f64),
}

impl Default for InitRanges {
    fn default() -> Self {
        Self {
            sensitive: (0.1, 0.5),
            insensitive: (0.5, 0.9),
        }
    }
}

/// `size` genomes for one class: each segment drops `floor(r * groups)`
/// random groups, `r` drawn from the range matching the segment's sensitivity.
pub fn init_class(class_id: usize, grouping: &GroupingPlan, sensitivity: &SensitivityProfile, ranges: InitRanges, size: usize, rng: &mut impl Rng) -> Vec<KernelGenome> {
    let offsets = grouping.segment_offsets();
    (0..size)
        .map(|_| {
            let mut bits = vec![true; grouping.n_bits()];
            for (seg, off) in grouping.segments.iter().zip(&offsets) {
                let g = seg.groups.len();
                let range = match sensitivity.labels[seg.layers[0]] {
                    Sensitivity::Sensitive => ranges.sensitive,
                    Sensitivity::Insensitive => ranges.insensitive,
                };
                let drop = ((draw(rng, range) * g as f64).floor() as usize).min(g);
                for i in sample(rng, g, drop) {
                    bits[off + i] = false;
                }
            }
            repair(&mut bits, grouping);
            KernelGenome::new(class_id, bits, 0)
        })
        .collect()
}

pub fn init_population(groupings: &[GroupingPlan], sensitivity: &SensitivityProfile, ranges: InitRanges, size: usize, rng: &mut impl Rng) -> Vec<Vec<KernelGenome>> {
    groupings
        .iter()
        .enumerate()
        .map(|(c, g)| init_class(c, g, sensitivity, ranges, size, rng))
        .collect()
}

/// Re-enables the most important group of any segment left without one.
pub fn repair(bits: &mut [bool], grouping: &GroupingPlan) {
    for (seg, off) in grouping.segments.iter().zip(grouping.segment_offsets()) {
        let g = seg.groups.len();
        if !bits[off..off + g].iter().any(|&b| b) {
            bits[off] = true;
        }
    }
}

/// Single-point crossover at `point`: `(a[..point] ++ b[point..], b[..point] ++ a[point..])`.
pub fn crossover(a: &[bool], b: &[bool], point: usize) -> (Vec<bool>, Vec<bool>) {
    let mut x = a[..point].to_vec();
    x.extend_from_slice(&b[point..]);
    let mut y = b[..point].to_vec();
    y.extend_from_slice(&a[point..]);
    (x, y)
}

pub fn mutate(bits: &mut [bool], p: f64, rng: &mut impl Rng) {
    for b in bits {
        if p >= 1.0 || (p > 0.0 && rng.random_bool(p)) {
            *b = !*b;
        }
    }
}

/// Next generation of one class: the top `parents` genomes breed `size`
/// children by single-point crossover and bit-flip mutation. `elite`, when
/// given, is carried over unchanged in slot 0.
pub fn evolve_class(
    pop: &[KernelGenome],
    parents: usize,
    mutation: f64,
    elite: Option<&KernelGenome>,
    grouping: &GroupingPlan,
    generation: usize,
    rng: &mut impl Rng,
) -> Vec<KernelGenome> {
    let size = pop.len();
    let class_id = pop[0].class_id;
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| pop[b].rank_key().partial_cmp(&pop[a].rank_key()).expect("finite fitness"));
    let parents: Vec<&KernelGenome> = order.iter().take(parents.clamp(1, size)).map(|&i| &pop[i]).collect();
    let mut next = Vec::with_capacity(size);
    if let Some(e) = elite {
        next.push(KernelGenome::new(class_id, e.bits.clone(), generation));
    }
    let len = pop[0].bits.len();
    while next.len() < size {
        let a = parents[rng.random_range(0..parents.len())];
        let b = parents[rng.random_range(0..parents.len())];
        let point = if len > 1 { rng.random_range(1..len) } else { 0 };
        let (x, y) = crossover(&a.bits, &b.bits, point);
        for mut child in [x, y] {
            if next.len() == size {
                break;
            }
            mutate(&mut child, mutation, rng);
            repair(&mut child, grouping);
            next.push(KernelGenome::new(class_id, child, generation));
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    #[test]
    fn jaccard_examples() {
        let a = [false, true, true, false];
        let b = [false, false, true, true];
        assert!((jaccard_distance(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard_distance(&a, &a), 0.0);
        assert_eq!(jaccard_distance(&[true, false], &[false, true]), 1.0);
        assert_eq!(jaccard_distance(&[false; 3], &[false; 3]), 0.0);
    }

    #[test]
    fn diff_and_fitness_examples() {
        let a = [true, false];
        let b = [false, true];
        // JD(a,b)=1, JD(a,a')=0, JD(a',b)=1
        assert!((diff(&[&a, &b, &a]) - 2.0 / 3.0).abs() < 1e-12);
        assert!((fitness(0.9, 0.8, 0.5) - 0.77).abs() < 1e-12);
        assert_eq!(diff(&[&a]), 0.0);
    }

    #[test]
    fn crossover_and_mutation_extremes() {
        let a = vec![true, true, false, false];
        let (x, y) = crossover(&a, &a, 2);
        assert_eq!((&x, &y), (&a, &a));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut m = x.clone();
        mutate(&mut m, 0.0, &mut rng);
        assert_eq!(m, a);
        mutate(&mut m, 1.0, &mut rng);
        assert_eq!(m, vec![false, false, true, true]);
    }

    use rand::SeedableRng;

    proptest! {
        #[test]
        fn jaccard_symmetric_and_bounded(a in proptest::collection::vec(any::<bool>(), 1..60), seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<bool> = a.iter().map(|_| rng.random_bool(0.5)).collect();
            let d = jaccard_distance(&a, &b);
            prop_assert_eq!(d, jaccard_distance(&b, &a));
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(jaccard_distance(&a, &a), 0.0);
        }

        #[test]
        fn fitness_is_convex(alpha in 0.01f64..0.99, acc in 0.0f64..=1.0, d in 0.0f64..=1.0) {
            let f = fitness(alpha, acc, d);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    use crate::analysis::{GroupRule, SegmentGroups};

    fn plan(widths: &[usize], g: usize) -> GroupingPlan {
        GroupingPlan {
            model_hash: "h".into(),
            class_id: Some(0),
            rule: GroupRule::Fixed(g),
            segments: widths
                .iter()
                .enumerate()
                .map(|(l, &w)| SegmentGroups {
                    layers: vec![l],
                    width: w,
                    groups: crate::analysis::chunk(&(0..w).collect::<Vec<_>>(), g),
                })
                .collect(),
        }
    }

    fn profile(labels: Vec<Sensitivity>) -> SensitivityProfile {
        let n = labels.len();
        SensitivityProfile {
            model_hash: "h".into(),
            base_acc: 1.0,
            drop_ratios: vec![0.9],
            threshold: 0.05,
            labels,
            acc_curve: vec![vec![1.0]; n],
            segments: (0..n).map(|l| vec![l]).collect(),
        }
    }

    fn zeros_per_segment(g: &KernelGenome, groups: usize) -> Vec<usize> {
        g.bits.chunks(groups).map(|c| c.iter().filter(|&&b| !b).count()).collect()
    }

    #[test]
    fn insensitive_layers_drop_five_to_nine_of_ten() {
        let p = plan(&[40, 40, 30], 10);
        let s = profile(vec![Sensitivity::Insensitive; 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for g in init_class(0, &p, &s, InitRanges::default(), 200, &mut rng) {
            assert!(zeros_per_segment(&g, 10).iter().all(|z| (5..=9).contains(z)));
        }
    }

    #[test]
    fn forced_ratio_drops_exactly_one() {
        let p = plan(&[20, 20], 10);
        let s = profile(vec![Sensitivity::Sensitive; 2]);
        let ranges = InitRanges {
            sensitive: (0.1, 0.1),
            ..InitRanges::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for g in init_class(0, &p, &s, ranges, 50, &mut rng) {
            assert_eq!(zeros_per_segment(&g, 10), vec![1, 1]);
        }
    }

    #[test]
    fn sensitive_layers_keep_more_on_average() {
        let p = plan(&[30, 30], 10);
        let s = profile(vec![Sensitivity::Sensitive, Sensitivity::Insensitive]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let pop = init_class(0, &p, &s, InitRanges::default(), 1000, &mut rng);
        let mean = |seg: usize| pop.iter().map(|g| zeros_per_segment(g, 10)[seg] as f64).sum::<f64>() / 1000.0;
        assert!(mean(0) < mean(1));
    }

    #[test]
    fn repair_restores_top_group() {
        let p = plan(&[8, 8], 4);
        let mut bits = vec![false, false, false, false, true, false, false, false];
        repair(&mut bits, &p);
        assert_eq!(bits, vec![true, false, false, false, true, false, false, false]);
    }

    #[test]
    fn evolve_without_mutation_keeps_identical_parents() {
        let p = plan(&[8, 8], 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let bits = vec![true, false, true, false, false, true, true, true];
        let mut pop: Vec<KernelGenome> = (0..6).map(|_| KernelGenome::new(2, bits.clone(), 0)).collect();
        pop.iter_mut().for_each(|g| g.fitness = Some(0.5));
        let next = evolve_class(&pop, 3, 0.0, None, &p, 1, &mut rng);
        assert_eq!(next.len(), 6);
        assert!(next.iter().all(|g| g.bits == bits && g.class_id == 2 && g.generation == 1));
    }
}
