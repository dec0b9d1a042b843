use serde::{Deserialize, Serialize};

use super::module::SlicedModule;
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision, recall and F1 of `class` treated as the positive label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BinaryScore {
    pub fn from_decisions(decisions: &[bool], positive: &[bool]) -> Self {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (&d, &p) in decisions.iter().zip(positive) {
            match (d, p) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fnn);
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    /// Scores a multi-class prediction stream for one class.
    pub fn for_class(pred: &[usize], labels: &[usize], class: usize) -> Self {
        let d: Vec<bool> = pred.iter().map(|&p| p == class).collect();
        let t: Vec<bool> = labels.iter().map(|&y| y == class).collect();
        Self::from_decisions(&d, &t)
    }
}

/// `f1[j][n]` for candidate `j` of class `n`, and the chosen candidate per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub f1: Vec<Vec<f64>>,
    pub best: Vec<usize>,
}

impl Recommendation {
    pub fn to_csv(&self) -> String {
        let n = self.best.len();
        let mut s = String::from("candidate");
        (0..n).for_each(|c| s.push_str(&format!(",class{c}")));
        s.push('\n');
        for (j, row) in self.f1.iter().enumerate() {
            s.push_str(&j.to_string());
            row.iter().for_each(|v| s.push_str(&format!(",{v:.6}")));
            s.push('\n');
        }
        s.push_str("best");
        self.best.iter().for_each(|b| s.push_str(&format!(",{b}")));
        s.push('\n');
        s
    }
}

fn recognition(module: &SlicedModule, data: &LabeledDataset) -> Result<BinaryScore> {
    let view = data.binary_view(module.class_id)?;
    let decisions = module.decisions(&data.full_batch())?;
    let positive: Vec<bool> = view.labels().iter().map(|&y| y == 1).collect();
    Ok(BinaryScore::from_decisions(&decisions, &positive))
}

/// `candidates[n][j]` is candidate `j` for class `n`; every class needs the same count.
/// Ties go to the lower candidate index.
pub fn evaluate_and_recommend(candidates: &[Vec<SlicedModule>], data: &LabeledDataset) -> Result<Recommendation> {
    let n = candidates.len();
    if n == 0 {
        return Err(Error::arg("no candidates"));
    }
    let j_count = candidates[0].len();
    if j_count == 0 || candidates.iter().any(|c| c.len() != j_count) {
        return Err(Error::arg("every class needs the same nonzero number of candidates"));
    }
    let counts = data.counts_per_class();
    for class in 0..n {
        if counts.get(class).copied().unwrap_or(0) == 0 {
            return Err(Error::arg(format!("evaluation data has no samples of class {class}")));
        }
        if let Some(m) = candidates[class].iter().find(|m| m.class_id != class) {
            return Err(Error::arg(format!("candidate for class {class} recognizes class {}", m.class_id)));
        }
    }
    let mut table = vec![vec![0.0; n]; j_count];
    for (class, list) in candidates.iter().enumerate() {
        for (j, m) in list.iter().enumerate() {
            table[j][class] = recognition(m, data)?.f1;
        }
    }
    let best = (0..n)
        .map(|class| {
            let mut b = 0;
            for j in 1..j_count {
                if table[j][class] > table[b][class] {
                    b = j;
                }
            }
            b
        })
        .collect();
    Ok(Recommendation { f1: table, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_arithmetic() {
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert!((f1(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_positive_on_ten_percent_view() {
        let positive: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let s = BinaryScore::from_decisions(&[true; 100], &positive);
        assert!((s.precision - 0.1).abs() < 1e-12);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.2 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn perfect_module() {
        let positive: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        assert_eq!(BinaryScore::from_decisions(&positive, &positive).f1, 1.0);
    }
}
