use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAD_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `param -= lr * grad`
    Sgd,
    /// Adam with the usual `(0.9, 0.999, 1e-8)` moments.
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the retained-kernel penalty in mask epochs.
    pub beta: f64,
    /// Per epoch: `true` trains masks and heads, `false` heads only.
    /// Defaults to [`default_actions`].
    #[serde(default)]
    pub actions: Option<Vec<bool>>,
    /// Inherits the model's training batch size when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Separate head / mask learning rates; both fall back to `lr`.
    #[serde(default)]
    pub head_lr: Option<f64>,
    #[serde(default)]
    pub mask_lr: Option<f64>,
    /// Epoch after which a CM still near chance aborts the run.
    #[serde(default = "default_heads_deadline")]
    pub heads_deadline: usize,
    pub seed: u64,
}

fn default_version() -> u32 {
    GRAD_CONFIG_VERSION
}

fn default_heads_deadline() -> usize {
    20
}

/// Five head-only epochs, then repeating blocks of five joint and two head-only epochs.
pub fn default_actions(epochs: usize) -> Vec<bool> {
    const BLOCK: [bool; 7] = [true, true, true, true, true, false, false];
    (0..epochs).map(|e| e >= 5 && BLOCK[(e - 5) % 7]).collect()
}

impl GradConfig {
    pub fn paper(seed: u64) -> Self {
        Self {
            version: GRAD_CONFIG_VERSION,
            epochs: 145,
            lr: 0.001,
            beta: 0.1,
            actions: None,
            batch_size: None,
            optimizer: Optimizer::Adam,
            head_lr: None,
            mask_lr: None,
            heads_deadline: 20,
            seed,
        }
    }

    /// Shorter schedule; masks move thirty times faster to make up for it.
    pub fn desk(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            mask_lr: Some(0.03),
            ..Self::paper(seed)
        }
    }

    pub fn actions(&self) -> Vec<bool> {
        self.actions.clone().unwrap_or_else(|| default_actions(self.epochs))
    }

    pub fn head_lr(&self) -> f64 {
        self.head_lr.unwrap_or(self.lr)
    }

    pub fn mask_lr(&self) -> f64 {
        self.mask_lr.unwrap_or(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != GRAD_CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported grad config version {}", self.version)));
        }
        if let Some(a) = &self.actions {
            if a.len() != self.epochs {
                return Err(Error::Config(format!("actions has {} entries for {} epochs", a.len(), self.epochs)));
            }
        }
        if !(self.lr > 0.0) || self.head_lr() <= 0.0 || self.mask_lr() <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_schedule() {
        let a = default_actions(19);
        assert_eq!(&a[..5], &[false; 5]);
        assert_eq!(&a[5..12], &[true, true, true, true, true, false, false]);
        assert_eq!(&a[12..19], &a[5..12]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<GradConfig>(r#"{"epochs":1,"lr":0.1,"beta":0.1,"seed":0,"betta":1}"#);
        assert!(err.is_err());
    }
}
