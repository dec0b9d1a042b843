//! Decomposition of trained CNN classifiers into per-class modules.
//!
//! Two splitters are provided: a genetic search over kernel-group bit
//! vectors ([`ga`]) and gradient-trained binary kernel masks with small
//! per-module heads ([`grad`]). The [`composer`] turns either result into
//! standalone sliced modules that can be evaluated, composed into new
//! classifiers or used to patch a weak model.

pub mod analysis;
pub mod bench;
pub mod bits;
pub mod cli;
pub mod composer;
pub mod datasets;
pub mod error;
pub mod ga;
pub mod grad;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
