use serde::{Deserialize, Serialize};

use super::config::Optimizer;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-parameter optimizer state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    kind: Optimizer,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimState {
    pub fn new(kind: Optimizer, len: usize) -> Self {
        let moments = if kind == Optimizer::Adam { len } else { 0 };
        Self {
            kind,
            step: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        }
    }

    /// Applies one update to `params` from `grad`.
    pub fn apply<P: Param>(&mut self, params: &mut [P], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        match self.kind {
            Optimizer::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    p.set(p.get() - lr * g);
                }
            }
            Optimizer::Adam => {
                self.step += 1;
                let c1 = 1.0 - BETA1.powi(self.step as i32);
                let c2 = 1.0 - BETA2.powi(self.step as i32);
                for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                    let update = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                    p.set(p.get() - update);
                }
            }
        }
    }
}

pub trait Param {
    fn get(&self) -> f64;
    fn set(&mut self, v: f64);
}

impl Param for f64 {
    fn get(&self) -> f64 {
        *self
    }
    fn set(&mut self, v: f64) {
        *self = v;
    }
}

impl Param for f32 {
    fn get(&self) -> f64 {
        *self as f64
    }
    fn set(&mut self, v: f64) {
        *self = v as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0f64, -2.0];
        OptimState::new(Optimizer::Sgd, 2).apply(&mut p, &[0.5, -1.0], 0.1);
        assert_eq!(p, vec![0.95, -1.9]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![0.0f32; 3];
        OptimState::new(Optimizer::Adam, 3).apply(&mut p, &[1e-6, -3.0, 0.2], 0.01);
        for (v, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 0.01).abs() < 1e-4, "{v}");
        }
    }
}
