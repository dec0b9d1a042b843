use super::genome::{diff, fitness, KernelGenome};
use crate::error::{Error, Result};

/// Cached per-individual module scores over one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    /// `scores[class][individual][sample]`: the module's score for its own class.
    pub scores: Vec<Vec<Vec<f64>>>,
    /// `kernels[class][individual]`: retained kernels, layer-major over the parent.
    pub kernels: Vec<Vec<Vec<bool>>>,
    pub labels: Vec<usize>,
}

impl ScoreTable {
    pub fn n_classes(&self) -> usize {
        self.scores.len()
    }

    pub fn population(&self) -> usize {
        self.scores[0].len()
    }

    fn samples_of(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.labels.len()).filter(|&s| classes.contains(&self.labels[s])).collect()
    }

    /// Accuracy of the partial CM `members` (sorted by class) on the samples of its classes.
    /// Ties in the argmax go to the lower class.
    pub fn accuracy(&self, members: &[(usize, usize)], samples: &[usize]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples
            .iter()
            .filter(|&&s| {
                let mut best = members[0];
                for &m in &members[1..] {
                    if self.scores[m.0][m.1][s] > self.scores[best.0][best.1][s] {
                        best = m;
                    }
                }
                best.0 == self.labels[s]
            })
            .count();
        hits as f64 / samples.len() as f64
    }

    pub fn diff_of(&self, members: &[usize]) -> f64 {
        let sets: Vec<&[bool]> = members.iter().enumerate().map(|(c, &i)| self.kernels[c][i].as_slice()).collect();
        diff(&sets)
    }
}

/// A full composed candidate: `members[c]` indexes class `c`'s population.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub members: Vec<usize>,
    pub acc: f64,
    pub diff: f64,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub finals: Vec<Candidate>,
    /// Best subtask accuracy each individual reached.
    pub partial: Vec<Vec<f64>>,
    /// Number of composed-model accuracy evaluations performed.
    pub evaluations: usize,
}

impl Evaluation {
    /// Highest-fitness candidate, earliest on ties.
    pub fn best(&self) -> &Candidate {
        let mut b = &self.finals[0];
        for c in &self.finals[1..] {
            if c.fitness > b.fitness {
                b = c;
            }
        }
        b
    }

    /// Writes fitness and subtask scores into the populations.
    pub fn assign(&self, pops: &mut [Vec<KernelGenome>]) {
        for (c, pop) in pops.iter_mut().enumerate() {
            for (i, g) in pop.iter_mut().enumerate() {
                g.fitness = None;
                g.partial = self.partial[c][i];
            }
        }
        for cand in &self.finals {
            for (c, &i) in cand.members.iter().enumerate() {
                let f = &mut pops[c][i].fitness;
                *f = Some(f.map_or(cand.fitness, |v: f64| v.max(cand.fitness)));
            }
        }
    }
}

fn finalize(table: &ScoreTable, alpha: f64, full: &[usize], members: Vec<usize>) -> Candidate {
    let acc = table.accuracy(&members.iter().copied().enumerate().collect::<Vec<_>>(), full);
    let d = table.diff_of(&members);
    Candidate {
        members,
        acc,
        diff: d,
        fitness: fitness(alpha, acc, d),
    }
}

fn check(table: &ScoreTable) -> Result<()> {
    if table.n_classes() < 2 {
        return Err(Error::arg("composed evaluation needs at least two classes"));
    }
    if table.scores.iter().any(|p| p.len() != table.population() || p.is_empty()) {
        return Err(Error::arg("every class needs the same nonzero population"));
    }
    Ok(())
}

/// Every combination of one individual per class.
pub fn exhaustive_evaluation(table: &ScoreTable, alpha: f64) -> Result<Evaluation> {
    check(table)?;
    let n = table.n_classes();
    let ni = table.population();
    let full: Vec<usize> = (0..table.labels.len()).collect();
    let mut finals = Vec::new();
    let mut members = vec![0usize; n];
    loop {
        finals.push(finalize(table, alpha, &full, members.clone()));
        let mut c = 0;
        while c < n {
            members[c] += 1;
            if members[c] < ni {
                break;
            }
            members[c] = 0;
            c += 1;
        }
        if c == n {
            break;
        }
    }
    let mut partial = vec![vec![0.0; ni]; n];
    for cand in &finals {
        for (c, &i) in cand.members.iter().enumerate() {
            partial[c][i] = f64::max(partial[c][i], cand.acc);
        }
    }
    Ok(Evaluation {
        evaluations: finals.len(),
        finals,
        partial,
    })
}

type Partial = (Vec<(usize, usize)>, f64);

fn top(mut beam: Vec<Partial>, k: usize) -> Vec<Partial> {
    // stable sort keeps enumeration order among equal accuracies
    beam.sort_by(|a, b| b.1.total_cmp(&a.1));
    beam.truncate(k.max(1));
    beam
}

/// Pruned evaluation: classes are paired `(0,1), (2,3), …` into binary
/// subtasks whose `N_I²` two-module CMs are all scored; the `n_top` best of
/// each subtask are merged subtask by subtask, keeping the `n_top` best
/// partial CMs at every merge, until the final merge yields full CMs. With odd
/// N the last class is ranked by joining the previous subtask's best pair.
/// `forced` candidates (e.g. last generation's best) are always scored.
pub fn pruned_evaluation(table: &ScoreTable, n_top: usize, alpha: f64, forced: &[Vec<usize>]) -> Result<Evaluation> {
    check(table)?;
    let n = table.n_classes();
    let ni = table.population();
    let full: Vec<usize> = (0..table.labels.len()).collect();
    let mut partial = vec![vec![0.0; ni]; n];
    let mut evaluations = 0;
    let mut beams: Vec<Vec<Partial>> = Vec::new();
    let mut c = 0;
    while c + 1 < n {
        let (a, b) = (c, c + 1);
        let samples = table.samples_of(&[a, b]);
        let mut all = Vec::with_capacity(ni * ni);
        for i in 0..ni {
            for j in 0..ni {
                let m = vec![(a, i), (b, j)];
                let acc = table.accuracy(&m, &samples);
                evaluations += 1;
                partial[a][i] = f64::max(partial[a][i], acc);
                partial[b][j] = f64::max(partial[b][j], acc);
                all.push((m, acc));
            }
        }
        beams.push(if n == 2 { all } else { top(all, n_top) });
        c += 2;
    }
    if c < n {
        let last = n - 1;
        let anchor = beams.last().expect("n >= 3 has a pair")[0].0.clone();
        let mut classes: Vec<usize> = anchor.iter().map(|m| m.0).collect();
        classes.push(last);
        let samples = table.samples_of(&classes);
        let mut all = Vec::with_capacity(ni);
        for i in 0..ni {
            let mut m = anchor.clone();
            m.push((last, i));
            let acc = table.accuracy(&m, &samples);
            evaluations += 1;
            partial[last][i] = f64::max(partial[last][i], acc);
            all.push((vec![(last, i)], acc));
        }
        beams.push(top(all, n_top));
    }

    let mut cur = beams[0].clone();
    for (k, beam) in beams.iter().enumerate().skip(1) {
        let last_merge = k + 1 == beams.len();
        let mut merged = Vec::with_capacity(cur.len() * beam.len());
        for (x, _) in &cur {
            for (y, _) in beam {
                let mut m = x.clone();
                m.extend_from_slice(y);
                m.sort_unstable();
                let classes: Vec<usize> = m.iter().map(|p| p.0).collect();
                let samples = if last_merge { full.clone() } else { table.samples_of(&classes) };
                let acc = table.accuracy(&m, &samples);
                evaluations += 1;
                merged.push((m, acc));
            }
        }
        cur = if last_merge { merged } else { top(merged, n_top) };
    }

    let mut finals: Vec<Candidate> = Vec::with_capacity(cur.len() + forced.len());
    for (m, _) in cur {
        let members: Vec<usize> = m.iter().map(|p| p.1).collect();
        if !finals.iter().any(|f| f.members == members) {
            finals.push(finalize(table, alpha, &full, members));
        }
    }
    for members in forced {
        if members.len() != n || members.iter().any(|&i| i >= ni) {
            return Err(Error::arg("forced candidate does not match the populations"));
        }
        if !finals.iter().any(|f| &f.members == members) {
            evaluations += 1;
            finals.push(finalize(table, alpha, &full, members.clone()));
        }
    }
    Ok(Evaluation {
        finals,
        partial,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_table(n: usize, ni: usize, samples: usize, seed: u64) -> ScoreTable {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..samples).map(|s| s % n).collect();
        let scores = (0..n)
            .map(|c| {
                (0..ni)
                    .map(|_| {
                        let skill: f64 = rng.random_range(0.0..1.0);
                        labels.iter().map(|&y| rng.random_range(0.0..1.0) + if y == c { skill } else { 0.0 }).collect()
                    })
                    .collect()
            })
            .collect();
        let kernels = (0..n).map(|_| (0..ni).map(|_| (0..12).map(|_| rng.random_bool(0.6)).collect()).collect()).collect();
        ScoreTable { scores, kernels, labels }
    }

    #[test]
    fn evaluation_counts() {
        let t = random_table(4, 3, 40, 0);
        assert_eq!(pruned_evaluation(&t, 2, 0.9, &[]).unwrap().evaluations, 22);
        let t2 = random_table(2, 5, 40, 1);
        let e = pruned_evaluation(&t2, 2, 0.9, &[]).unwrap();
        assert_eq!(e.evaluations, 25);
        assert_eq!(e.finals.len(), 25);
        assert_eq!(exhaustive_evaluation(&t, 0.9).unwrap().evaluations, 81);
    }

    #[test]
    fn odd_class_count_runs() {
        let t = random_table(5, 3, 50, 2);
        let e = pruned_evaluation(&t, 2, 0.9, &[]).unwrap();
        assert!(e.finals.iter().all(|f| f.members.len() == 5));
        // 2·9 pairs + 3 singleton + 4 + 4 merges
        assert_eq!(e.evaluations, 29);
    }

    #[test]
    fn hand_argmax() {
        let t = ScoreTable {
            scores: vec![vec![vec![0.9, 0.2, 0.5]], vec![vec![0.1, 0.8, 0.5]]],
            kernels: vec![vec![vec![true]], vec![vec![true]]],
            labels: vec![0, 1, 1],
        };
        // sample 2 ties → class 0, wrong
        let e = exhaustive_evaluation(&t, 0.9).unwrap();
        assert!((e.finals[0].acc - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fitness_goes_to_members() {
        let t = random_table(4, 3, 40, 3);
        let e = exhaustive_evaluation(&t, 0.9).unwrap();
        let mut pops: Vec<Vec<KernelGenome>> = (0..4).map(|c| (0..3).map(|_| KernelGenome::new(c, vec![true], 0)).collect()).collect();
        e.assign(&mut pops);
        let best = e.best().fitness;
        assert!(pops.iter().all(|p| p.iter().any(|g| g.fitness == Some(best))));
    }
}
