//! Shared building blocks of the scenarios.

use std::time::Instant;

use crate::analysis::GroupRule;
use crate::composer::SlicedModule;
use crate::datasets::{split_pair, LabeledDataset, SplitTag, SyntheticConfig};
use crate::error::Result;
use crate::ga::{build_search_space, search, GaConfig, SearchResult, SearchSpace};
use crate::grad::{split, GradConfig, GradResult};
use crate::zoo::{build_model, train, ArchitectureSpec, TrainConfig, TrainedModel};

/// Train / valid / test / module-eval splits of one task.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub train: LabeledDataset,
    pub valid: LabeledDataset,
    pub test: LabeledDataset,
    pub module_eval: LabeledDataset,
}

impl Fixture {
    /// Synthetic task over the given universe class ids. Training data is
    /// split 8:2 into train/valid; an independent draw is split 8:2 into
    /// test/module-eval.
    pub fn synthetic(class_ids: &[usize], per_class: usize, side: usize, seed: u64) -> Result<Self> {
        let make = |per_class: usize, seed: u64| {
            SyntheticConfig {
                class_ids: class_ids.to_vec(),
                ..SyntheticConfig::new(class_ids.len(), per_class, side, seed)
            }
            .generate()
        };
        let (train, valid) = split_pair(&make(per_class, seed)?, seed, (SplitTag::Train, SplitTag::Valid))?;
        let held_out = make((per_class / 2).max(5), seed.wrapping_add(1_000_003))?;
        let (test, module_eval) = split_pair(&held_out, seed, (SplitTag::Test, SplitTag::ModuleEval))?;
        Ok(Self {
            train,
            valid,
            test,
            module_eval,
        })
    }

    /// The 4-class desk fixture used throughout the tests.
    pub fn desk(seed: u64) -> Result<Self> {
        Self::synthetic(&[0, 1, 2, 3], 500, 16, seed)
    }

    pub fn n_classes(&self) -> usize {
        self.train.n_classes()
    }
}

pub fn train_on(spec: ArchitectureSpec, train_set: &LabeledDataset, valid: &LabeledDataset, test: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut tm = train(build_model(spec, cfg.seed)?, train_set, valid, cfg)?;
    tm.evaluate_test(test)?;
    Ok(tm)
}

pub fn train_tm(spec: ArchitectureSpec, fx: &Fixture, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_on(spec, &fx.train, &fx.valid, &fx.test, cfg)
}

/// A splitter run: modules plus wall-clock seconds.
#[derive(Clone, Debug)]
pub struct GradRun {
    pub result: GradResult,
    pub modules: Vec<SlicedModule>,
    pub secs: f64,
}

pub fn run_grad(tm: &TrainedModel, train_set: &LabeledDataset, valid: &LabeledDataset, cfg: &GradConfig) -> Result<GradRun> {
    let t = Instant::now();
    let result = split(tm, train_set, valid, cfg)?;
    let modules = result.modules(tm)?;
    Ok(GradRun {
        result,
        modules,
        secs: t.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct GaRun {
    pub result: SearchResult,
    pub space: SearchSpace,
    pub modules: Vec<SlicedModule>,
    pub secs: f64,
}

pub fn run_ga(tm: &TrainedModel, fx: &Fixture, cfg: &GaConfig, rule: GroupRule, class_agnostic: bool) -> Result<GaRun> {
    let t = Instant::now();
    let space = build_search_space(tm, &fx.train, &fx.valid, rule, class_agnostic, 0.05, cfg.seed)?;
    let result = search(tm, &fx.valid, &space, cfg)?;
    let modules = result.modules(tm, &space.groupings)?;
    Ok(GaRun {
        result,
        space,
        modules,
        secs: t.elapsed().as_secs_f64(),
    })
}

/// Share of the parent's kernels kept, averaged over modules.
pub fn retained_fraction(modules: &[SlicedModule], total_kernels: usize) -> f64 {
    let kept: usize = modules.iter().map(SlicedModule::retained_kernels).sum();
    kept as f64 / (modules.len() * total_kernels).max(1) as f64
}

/// Mean retention per conv layer over modules.
pub fn layer_retention(modules: &[SlicedModule], widths: &[usize]) -> Vec<f64> {
    widths
        .iter()
        .enumerate()
        .map(|(l, &w)| modules.iter().map(|m| m.kept[l].len() as f64 / w as f64).sum::<f64>() / modules.len().max(1) as f64)
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
