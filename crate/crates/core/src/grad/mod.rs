//! Gradient-trained kernel masks with per-module binary heads.

mod config;
mod head;
mod masks;
mod optim;
mod split;

pub use config::{default_actions, GradConfig, Optimizer, GRAD_CONFIG_VERSION};
pub use head::{sigmoid, Head, HeadGrad, HeadTrace};
pub use masks::{bin, ste, MaskSet};
pub use optim::{OptimState, Param};
pub use split::{cm_accuracy, forward, gradients, losses, split, EpochRecord, GradResult, GradState, StepGrads};
