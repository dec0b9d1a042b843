use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::module::SlicedModule;
use crate::datasets::{ImageBatch, LabeledDataset};
use crate::error::{Error, Result};
use crate::zoo::{accuracy, PREDICT_CHUNK};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// All modules share one prepared input and run concurrently.
    #[default]
    Parallel,
    /// Modules run one after another in class order; each releases its
    /// buffers before the next starts.
    Serial,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Mode::Parallel),
            "serial" => Ok(Mode::Serial),
            other => Err(Error::arg(format!("unknown mode {other}"))),
        }
    }
}

/// N per-class modules predicting by argmax over their concatenated scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedModel {
    pub modules: Vec<SlicedModule>,
    pub mode: Mode,
    /// Optional per-module `(min, max)` applied to scores before the argmax.
    pub calibration: Option<Vec<(f64, f64)>>,
}

pub fn compose(modules: Vec<SlicedModule>, mode: Mode) -> Result<ComposedModel> {
    let n = modules.len();
    if n < 2 {
        return Err(Error::Compose(format!("need at least two modules, got {n}")));
    }
    let mut seen = vec![false; n];
    for m in &modules {
        if m.class_id >= n || std::mem::replace(&mut seen[m.class_id], true) {
            return Err(Error::Compose(format!("class {} is duplicated or outside [0, {n})", m.class_id)));
        }
    }
    if let Some(m) = modules.iter().find(|m| m.net.n_classes() != n) {
        return Err(Error::Compose(format!(
            "module for class {} comes from a {}-class model, {n} modules given",
            m.class_id,
            m.net.n_classes()
        )));
    }
    let mut modules = modules;
    modules.sort_by_key(|m| m.class_id);
    ComposedModel::from_ordered(modules, mode)
}

impl ComposedModel {
    /// Output `k` is module `k`'s score, whatever class it was split for.
    /// Used to build classifiers for new tasks out of modules from several models.
    pub fn from_ordered(modules: Vec<SlicedModule>, mode: Mode) -> Result<Self> {
        if modules.len() < 2 {
            return Err(Error::Compose(format!("need at least two modules, got {}", modules.len())));
        }
        let input = modules[0].net.spec().input;
        if modules.iter().any(|m| m.net.spec().input != input) {
            return Err(Error::Compose("modules disagree on input dimensions".into()));
        }
        Ok(ComposedModel {
            modules,
            mode,
            calibration: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.modules.len()
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Min-max calibration of every module's scores on `data`.
    pub fn calibrate(&mut self, data: &LabeledDataset) -> Result<()> {
        let n = self.modules.len();
        let raw = self.raw_scores(&data.full_batch())?;
        let mut cal = Vec::with_capacity(n);
        for k in 0..n {
            let (lo, hi) = raw
                .chunks(n)
                .map(|row| row[k])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !(hi > lo) {
                return Err(Error::Calibration(format!("module {k}: degenerate module output range")));
            }
            cal.push((lo, hi));
        }
        self.calibration = Some(cal);
        Ok(())
    }

    /// Uncalibrated scores, row-major `B×N`.
    pub fn raw_scores(&self, batch: &ImageBatch) -> Result<Vec<f64>> {
        let n = self.modules.len();
        let mut out = vec![0f64; batch.len * n];
        match self.mode {
            Mode::Serial => {
                for (k, m) in self.modules.iter().enumerate() {
                    let s = m.scores(batch)?;
                    for (r, v) in s.into_iter().enumerate() {
                        out[r * n + k] = v;
                    }
                }
            }
            Mode::Parallel => {
                // every chunk is prepared once and held for all modules; each
                // module then streams through the chunks with its weights hot
                let chunks = (0..batch.len)
                    .step_by(PREDICT_CHUNK)
                    .map(|start| {
                        let part = batch.slice(start, (start + PREDICT_CHUNK).min(batch.len));
                        let prepared = self.modules[0].net.prepare(&part)?;
                        Ok((part, prepared))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let cols: Vec<Vec<f64>> = self
                    .modules
                    .par_iter()
                    .map(|m| {
                        let mut col = Vec::with_capacity(batch.len);
                        for (part, prepared) in &chunks {
                            col.extend(m.score_logits(&m.net.forward_prepared(prepared, part)?));
                        }
                        Ok(col)
                    })
                    .collect::<Result<_>>()?;
                for (k, col) in cols.into_iter().enumerate() {
                    for (r, v) in col.into_iter().enumerate() {
                        out[r * n + k] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `scores[r][k]`: module `k`'s (optionally calibrated) score for image `r`.
    pub fn scores(&self, batch: &ImageBatch) -> Result<Vec<Vec<f64>>> {
        let n = self.modules.len();
        let raw = self.raw_scores(batch)?;
        Ok(raw
            .chunks(n)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(k, &v)| match &self.calibration {
                        Some(c) => (v - c[k].0) / (c[k].1 - c[k].0),
                        None => v,
                    })
                    .collect()
            })
            .collect())
    }

    pub fn predict(&self, batch: &ImageBatch) -> Result<Vec<usize>> {
        Ok(self.scores(batch)?.iter().map(|row| argmax_f64(row)).collect())
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        Ok(accuracy(&self.predict(&ds.full_batch())?, ds.labels()))
    }
}

/// First index of the maximum.
pub fn argmax_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::{decode, Provenance};
    use crate::datasets::gen_synthetic;
    use crate::zoo::{build_model, ArchitectureSpec, TrainedModel};

    fn identity_modules(tm: &TrainedModel) -> Vec<SlicedModule> {
        let l = tm.spec().total_kernels();
        (0..tm.net.n_classes())
            .map(|c| decode(tm, c, &vec![true; l], None, Provenance::Ga).unwrap())
            .collect()
    }

    #[test]
    fn identity_composition_reproduces_argmax() {
        let tm = build_model(ArchitectureSpec::desk_plain(4), 3).unwrap();
        let data = gen_synthetic(4, 80, 16, 1).unwrap();
        let cm = compose(identity_modules(&tm), Mode::Parallel).unwrap();
        let batch = data.full_batch();
        assert_eq!(cm.predict(&batch).unwrap(), tm.net.predict(&batch).unwrap().argmax_rows());
    }

    #[test]
    fn modes_agree_bit_exactly() {
        let tm = build_model(ArchitectureSpec::desk_res(4), 3).unwrap();
        let data = gen_synthetic(4, 70, 16, 2).unwrap();
        let mut mods = identity_modules(&tm);
        mods.reverse();
        let par = compose(mods, Mode::Parallel).unwrap();
        let ser = par.clone().with_mode(Mode::Serial);
        let batch = data.full_batch();
        assert_eq!(par.raw_scores(&batch).unwrap(), ser.raw_scores(&batch).unwrap());
        // kth score equals module k alone
        let alone = ser.modules[2].scores(&batch).unwrap();
        let all = par.scores(&batch).unwrap();
        assert!(all.iter().zip(&alone).all(|(row, &v)| row[2] == v));
    }

    #[test]
    fn duplicate_or_missing_class_rejected() {
        let tm = build_model(ArchitectureSpec::desk_plain(4), 3).unwrap();
        let mut mods = identity_modules(&tm);
        mods[1] = mods[0].clone();
        assert!(matches!(compose(mods, Mode::Serial), Err(Error::Compose(_))));
        let mut mods = identity_modules(&tm);
        mods.pop();
        assert!(compose(mods, Mode::Serial).is_err());
    }
}
