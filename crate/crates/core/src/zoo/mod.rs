//! CNN families, the training substrate and FLOPs accounting.

mod flops;
mod io;
mod network;
mod spec;
mod train;

pub use flops::{count_flops, FlopsConvention, FlopsReport, LayerFlops};
pub use io::{load_model, save_model, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use network::{accuracy, softmax_cross_entropy, ConvParams, DenseParams, Gradients, Network, Normalization, PreparedInput, Probe, Tape, PREDICT_CHUNK};
pub use spec::{ArchitectureSpec, ConvSpec, Family, InputShape, Plan, Scale, Stage};
pub use train::{augment, train, EpochStat, TrainConfig, TRAIN_CONFIG_VERSION};

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_acc: f64,
    pub valid_acc: f64,
    pub test_acc: Option<f64>,
    pub best_epoch: usize,
    #[serde(default)]
    pub history: Vec<EpochStat>,
}

/// A network together with how it was trained and how well it does.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub net: Network,
    pub train_config: Option<TrainConfig>,
    pub metrics: Option<Metrics>,
}

impl TrainedModel {
    pub fn spec(&self) -> &ArchitectureSpec {
        self.net.spec()
    }

    /// Content hash over the spec, normalization and every parameter.
    pub fn hash(&self) -> String {
        io::model_hash(&self.net)
    }

    /// Test accuracy, also recorded in the metrics when present.
    pub fn evaluate_test(&mut self, test: &LabeledDataset) -> Result<f64> {
        let acc = self.net.accuracy(test)?;
        if let Some(m) = self.metrics.as_mut() {
            m.test_acc = Some(acc);
        }
        Ok(acc)
    }
}

/// Untrained model with seeded initialization.
pub fn build_model(spec: ArchitectureSpec, seed: u64) -> Result<TrainedModel> {
    let net = Network::new(spec, seed)?;
    // smoke-test the dataflow on a one-image probe
    let inp = net.spec().input;
    let probe = crate::tensor::FeatureMap::zeros(inp.channels, 1, inp.height, inp.width);
    let out = net.forward(&probe, None, None, None);
    debug_assert_eq!(out.cols, net.n_classes());
    Ok(TrainedModel {
        net,
        train_config: None,
        metrics: None,
    })
}
