//! Experiment harness: modularization quality, patching, reuse, new-task
//! composition and prediction overhead at desk scale, with CSV/Markdown/SVG
//! reporting.

mod pipeline;
mod report;
mod scenarios;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use pipeline::{layer_retention, mean, retained_fraction, run_ga, run_grad, std, train_on, train_tm, Fixture, GaRun, GradRun};
pub use report::{f4, mean_std, Plot, Report, Series, SummaryRow, Table, Verdict};
pub use scenarios::{
    accuracy_from_log, new_task_compose, overhead, patch_experiment, predictions_csv, reuse_experiment, task_pool, time_prediction,
    train_weak, weakest_class, ModularizeRow, ModulePool, NewTaskRow, NewTaskSetup, OverheadRow, PatchRow, ReuseRow, ReuseSetup, WeakKind,
    OVERFIT_FRACTION,
};

use crate::analysis::GroupRule;
use crate::datasets::{load_manifest, split_pair, SplitTag};
use crate::error::{Error, Result};
use crate::ga::GaConfig;
use crate::grad::GradConfig;
use crate::zoo::{Family, TrainConfig};

pub const BENCH_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "rq1_modularize", alias = "rq1")]
    Modularize,
    #[serde(rename = "rq2_patch", alias = "rq2")]
    Patch,
    #[serde(rename = "rq3_reuse", alias = "rq3")]
    Reuse,
    #[serde(rename = "rq4_newtask", alias = "rq4")]
    NewTask,
    #[serde(rename = "rq5_overhead", alias = "rq5")]
    Overhead,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Modularize => "rq1_modularize",
            Scenario::Patch => "rq2_patch",
            Scenario::Reuse => "rq3_reuse",
            Scenario::NewTask => "rq4_newtask",
            Scenario::Overhead => "rq5_overhead",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::arg(format!("unknown scenario {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splitter {
    Ga,
    Grad,
}

impl Splitter {
    pub fn name(self) -> &'static str {
        match self {
            Splitter::Ga => "ga",
            Splitter::Grad => "grad",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Splitter::Ga => "CNNSplitter",
            Splitter::Grad => "GradSplitter",
        }
    }
}

/// A stored model to use instead of training one per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub path: PathBuf,
    /// Expected content hash; checked when present.
    #[serde(default)]
    pub hash: Option<String>,
}

/// Dataset manifests to use instead of the synthetic fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRef {
    /// Split 8:2 into train/valid.
    pub train: PathBuf,
    /// Split 8:2 into test/module-eval.
    pub test: PathBuf,
    #[serde(default)]
    pub train_sha256: Option<String>,
    #[serde(default)]
    pub test_sha256: Option<String>,
}

impl DataRef {
    pub fn load(&self, seed: u64) -> Result<Fixture> {
        let load = |p: &Path, expect: &Option<String>| -> Result<_> {
            let (m, ds) = load_manifest(p)?;
            if let Some(h) = expect {
                if *h != m.sha256 {
                    return Err(Error::Artifact(format!("dataset {} does not match recorded hash {h}", p.display())));
                }
            }
            Ok(ds)
        };
        let (train, valid) = split_pair(&load(&self.train, &self.train_sha256)?, seed, (SplitTag::Train, SplitTag::Valid))?;
        let (test, module_eval) = split_pair(&load(&self.test, &self.test_sha256)?, seed, (SplitTag::Test, SplitTag::ModuleEval))?;
        if train.n_classes() != test.n_classes() {
            return Err(Error::ClassSpace("train and test manifests disagree on classes".into()));
        }
        Ok(Fixture {
            train,
            valid,
            test,
            module_eval,
        })
    }
}

fn default_version() -> u32 {
    BENCH_CONFIG_VERSION
}
fn default_family() -> Family {
    Family::Plain
}
fn default_classes() -> usize {
    4
}
fn default_per_class() -> usize {
    500
}
fn default_side() -> usize {
    16
}
fn default_train_epochs() -> usize {
    20
}
fn default_splitters() -> Vec<Splitter> {
    vec![Splitter::Grad, Splitter::Ga]
}
fn default_weak() -> Vec<WeakKind> {
    vec![WeakKind::Simple, WeakKind::Underfit, WeakKind::Overfit]
}
fn default_subsets() -> usize {
    3
}
fn default_concentration() -> f64 {
    1.0
}
fn default_threshold() -> usize {
    40
}
fn default_timing_runs() -> usize {
    5
}
fn default_grad_epochs() -> usize {
    60
}

/// One experiment: a scenario run over a list of seeds. Unset sub-configs
/// fall back to the desk presets with the run's seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_family")]
    pub family: Family,
    /// Classes of the synthetic fixture (per task in the new-task scenario).
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default)]
    pub data: Option<DataRef>,
    #[serde(default)]
    pub model: Option<ModelRef>,
    #[serde(default = "default_train_epochs")]
    pub train_epochs: usize,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default = "default_grad_epochs")]
    pub grad_epochs: usize,
    #[serde(default)]
    pub grad: Option<GradConfig>,
    #[serde(default)]
    pub ga: Option<GaConfig>,
    #[serde(default)]
    pub group_rule: GroupRule,
    #[serde(default = "default_splitters")]
    pub splitters: Vec<Splitter>,
    #[serde(default = "default_weak")]
    pub weak_kinds: Vec<WeakKind>,
    #[serde(default = "default_subsets")]
    pub subsets: usize,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_threshold")]
    pub subset_threshold: usize,
    #[serde(default = "default_timing_runs")]
    pub timing_runs: usize,
}

impl BenchConfig {
    pub fn new(scenario: Scenario, seeds: Vec<u64>) -> Self {
        serde_json::from_value(serde_json::json!({ "scenario": scenario, "seeds": seeds })).expect("defaults deserialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != BENCH_CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported bench config version {}", self.version)));
        }
        if self.seeds.is_empty() {
            return Err(Error::arg("seed list is empty"));
        }
        if self.splitters.is_empty() || self.n_classes < 2 || self.subsets == 0 || self.timing_runs == 0 {
            return Err(Error::Config("splitters, classes, subsets and timing runs must be non-empty".into()));
        }
        if let Some(g) = &self.grad {
            g.validate()?;
        }
        if let Some(g) = &self.ga {
            g.validate()?;
        }
        if let Some(m) = &self.model {
            if !m.path.join("spec.json").exists() {
                return Err(Error::Artifact(format!("model {} does not exist", m.path.display())));
            }
        }
        if let Some(d) = &self.data {
            for p in [&d.train, &d.test] {
                if !p.exists() {
                    return Err(Error::Artifact(format!("dataset manifest {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        match &self.train {
            Some(t) => TrainConfig { seed, ..t.clone() },
            None => TrainConfig::desk(self.train_epochs, seed),
        }
    }

    pub fn grad_config(&self, seed: u64) -> GradConfig {
        match &self.grad {
            Some(g) => GradConfig { seed, ..g.clone() },
            None => GradConfig::desk(self.grad_epochs, seed),
        }
    }

    pub fn ga_config(&self, seed: u64) -> GaConfig {
        match &self.ga {
            Some(g) => GaConfig { seed, ..g.clone() },
            None => GaConfig::desk(seed),
        }
    }
}

/// Runs the scenario over every seed. Stage failures are recorded in the
/// report rather than aborting; only an invalid config is an error.
pub fn run(cfg: &BenchConfig) -> Result<Report> {
    cfg.validate()?;
    let mut report = Report::new(cfg.scenario.name());
    report.notes.push(format!(
        "family {:?}, seeds {:?}, FLOPs convention: {}",
        cfg.family,
        cfg.seeds,
        crate::zoo::FlopsConvention::default().describe()
    ));
    match cfg.scenario {
        Scenario::Modularize => scenarios::modularize(cfg, &mut report),
        Scenario::Patch => scenarios::patching(cfg, &mut report),
        Scenario::Reuse => scenarios::reuse(cfg, &mut report),
        Scenario::NewTask => scenarios::new_task(cfg, &mut report),
        Scenario::Overhead => scenarios::overhead_scenario(cfg, &mut report),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_parse_both_ways() {
        assert_eq!("rq1".parse::<Scenario>().unwrap(), Scenario::Modularize);
        assert_eq!("rq5_overhead".parse::<Scenario>().unwrap(), Scenario::Overhead);
        assert!("rq9".parse::<Scenario>().is_err());
    }

    #[test]
    fn empty_seed_list_is_argument_error() {
        let cfg = BenchConfig::new(Scenario::Modularize, vec![]);
        assert!(matches!(run(&cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<BenchConfig>(r#"{"scenario":"rq1","seeds":[0],"sedes":[1]}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn sub_configs_take_run_seed() {
        let mut cfg = BenchConfig::new(Scenario::Reuse, vec![4]);
        cfg.grad = Some(GradConfig::desk(3, 99));
        assert_eq!(cfg.grad_config(4).seed, 4);
        assert_eq!(cfg.grad_config(4).epochs, 3);
        assert_eq!(cfg.ga_config(2).seed, 2);
    }
}
