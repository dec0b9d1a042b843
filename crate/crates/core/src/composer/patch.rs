use super::compose::argmax_f64;
use super::module::SlicedModule;
use crate::datasets::{ImageBatch, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::softmax;
use crate::zoo::{accuracy, TrainedModel};

/// A weak model whose prediction for `tc` is replaced by a calibrated module score.
#[derive(Clone, Debug)]
pub struct PatchedModel {
    pub weak: TrainedModel,
    pub patch: SlicedModule,
    pub tc: usize,
    /// `(min, max)` of the patch's raw scores on class-`tc` calibration samples.
    pub calibration: (f64, f64),
}

/// `(min, max)` of the module's scores on `calib`, which must hold only class-`tc` samples.
pub fn calibration_range(module: &SlicedModule, calib: &LabeledDataset) -> Result<(f64, f64)> {
    if calib.is_empty() {
        return Err(Error::Calibration("calibration set is empty".into()));
    }
    if calib.labels().iter().any(|&y| y != module.class_id) {
        return Err(Error::Calibration(format!(
            "calibration samples must all be labeled {}",
            module.class_id
        )));
    }
    let scores = module.scores(&calib.full_batch())?;
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(Error::Calibration("degenerate module output range".into()));
    }
    Ok((lo, hi))
}

pub fn patch(weak: TrainedModel, module: SlicedModule, tc: usize, calib: &LabeledDataset) -> Result<PatchedModel> {
    if tc >= weak.net.n_classes() {
        return Err(Error::arg(format!("target class {tc} outside the weak model's {} classes", weak.net.n_classes())));
    }
    if module.class_id != tc {
        return Err(Error::arg(format!("module recognizes class {}, not {tc}", module.class_id)));
    }
    if module.net.spec().input != weak.spec().input {
        return Err(Error::arg("module and weak model disagree on input dimensions"));
    }
    let calibration = calibration_range(&module, calib)?;
    Ok(PatchedModel {
        weak,
        patch: module,
        tc,
        calibration,
    })
}

impl PatchedModel {
    /// Recomputes the calibration range, e.g. after swapping the patch.
    pub fn recalibrate(&mut self, calib: &LabeledDataset) -> Result<()> {
        self.calibration = calibration_range(&self.patch, calib)?;
        Ok(())
    }

    /// The affine min-max map. Scores outside the calibration range pass through unclipped.
    pub fn normalize(&self, score: f64) -> f64 {
        let (lo, hi) = self.calibration;
        (score - lo) / (hi - lo)
    }

    /// Softmaxed weak outputs with the `tc` entry replaced, one row per image.
    pub fn outputs(&self, batch: &ImageBatch) -> Result<Vec<Vec<f64>>> {
        let logits = self.weak.net.predict(batch)?;
        let scores = self.patch.scores(batch)?;
        Ok((0..logits.rows)
            .map(|r| {
                let row: Vec<f64> = logits.row(r).iter().map(|&v| v as f64).collect();
                let mut p = softmax(&row);
                p[self.tc] = self.normalize(scores[r]);
                p
            })
            .collect())
    }

    pub fn predict(&self, batch: &ImageBatch) -> Result<Vec<usize>> {
        Ok(self.outputs(batch)?.iter().map(|row| argmax_f64(row)).collect())
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        Ok(accuracy(&self.predict(&ds.full_batch())?, ds.labels()))
    }
}
