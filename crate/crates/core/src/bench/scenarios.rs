//! The five experiment scenarios and the reusable experiments behind them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::pipeline::{layer_retention, mean, retained_fraction, run_ga, run_grad, train_on, train_tm, Fixture};
use super::report::{f4, mean_std, Plot, Report, SummaryRow, Table};
use super::{BenchConfig, Splitter};
use crate::composer::{argmax_f64, compose, evaluate_and_recommend, patch, BinaryScore, ComposedModel, Mode, SlicedModule};
use crate::datasets::{dirichlet_subsets, LabeledDataset, SplitTag};
use crate::error::{Error, Result};
use crate::zoo::{accuracy, count_flops, load_model, ArchitectureSpec, Family, FlopsConvention, Scale, TrainConfig, TrainedModel};

/// Per-sample predictions of several classifiers, one column each.
pub fn predictions_csv(labels: &[usize], columns: &[(&str, &[usize])]) -> String {
    let mut out = String::from("sample,label");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, y) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{y}"));
        for (_, p) in columns {
            out.push_str(&format!(",{}", p[i]));
        }
        out.push('\n');
    }
    out
}

/// Accuracy of one column of a [`predictions_csv`] log.
pub fn accuracy_from_log(csv: &str, column: &str) -> Result<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == column)
        .ok_or_else(|| Error::arg(format!("no column {column} in prediction log")))?;
    let (mut hit, mut n) = (0usize, 0usize);
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        n += 1;
        hit += (cells[1] == cells[col]) as usize;
    }
    Ok(hit as f64 / n.max(1) as f64)
}

fn cm_predictions(modules: &[SlicedModule], data: &LabeledDataset) -> Result<Vec<usize>> {
    compose(modules.to_vec(), Mode::Parallel)?.predict(&data.full_batch())
}

fn fixture_for(cfg: &BenchConfig, seed: u64) -> Result<Fixture> {
    match &cfg.data {
        Some(d) => d.load(seed),
        None => Fixture::synthetic(&(0..cfg.n_classes).collect::<Vec<_>>(), cfg.per_class, cfg.side, seed),
    }
}

fn model_for(cfg: &BenchConfig, fx: &Fixture, seed: u64) -> Result<TrainedModel> {
    match &cfg.model {
        Some(r) => {
            let mut tm = load_model(&r.path)?;
            if let Some(h) = &r.hash {
                if *h != tm.hash() {
                    return Err(Error::Artifact(format!("model {} does not match recorded hash {h}", r.path.display())));
                }
            }
            if tm.net.n_classes() != fx.n_classes() {
                return Err(Error::ClassSpace(format!(
                    "model has {} classes, data has {}",
                    tm.net.n_classes(),
                    fx.n_classes()
                )));
            }
            tm.evaluate_test(&fx.test)?;
            Ok(tm)
        }
        None => {
            let spec = ArchitectureSpec::preset(cfg.family, Scale::Desk, fx.n_classes()).with_input_side(fx.train.dims().0);
            train_tm(spec, fx, &cfg.train_config(seed))
        }
    }
}

fn record_failure<T>(report: &mut Report, seed: u64, stage: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            report.failures.push(format!("seed {seed}, {stage}: {e}"));
            None
        }
    }
}

/// One splitter's outcome on one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularizeRow {
    pub seed: u64,
    pub splitter: Splitter,
    pub tm_acc: f64,
    pub cm_acc: f64,
    pub retained: f64,
    pub layer_retention: Vec<f64>,
    pub secs: f64,
}

impl ModularizeRow {
    /// Accuracy loss in percentage points.
    pub fn loss_points(&self) -> f64 {
        (self.tm_acc - self.cm_acc) * 100.0
    }
}

pub(super) fn modularize(cfg: &BenchConfig, report: &mut Report) {
    let mut rows: Vec<ModularizeRow> = Vec::new();
    let mut grad_plot = Plot::new("GradSplitter convergence", "epoch", "value");
    let mut ga_plot = Plot::new("CNNSplitter convergence", "generation", "best CM accuracy");
    for &seed in &cfg.seeds {
        let Some(fx) = record_failure(report, seed, "fixture", fixture_for(cfg, seed)) else { continue };
        let Some(tm) = record_failure(report, seed, "train", model_for(cfg, &fx, seed)) else { continue };
        let tm_pred = tm.net.predict_labels(&fx.test).unwrap_or_default();
        let tm_acc = accuracy(&tm_pred, fx.test.labels());
        let widths: Vec<usize> = tm.net.conv.iter().map(|c| c.out_channels).collect();
        let total = tm.spec().total_kernels();
        let mut columns: Vec<(String, Vec<usize>)> = vec![("tm".into(), tm_pred)];
        for &splitter in &cfg.splitters {
            let outcome = match splitter {
                Splitter::Grad => run_grad(&tm, &fx.train, &fx.valid, &cfg.grad_config(seed)).map(|r| {
                    let log = &r.result.log;
                    grad_plot.add(format!("retained s{seed}"), log.iter().map(|e| (e.epoch as f64, e.retained)).collect());
                    grad_plot.add(format!("valid acc s{seed}"), log.iter().map(|e| (e.epoch as f64, e.valid_acc)).collect());
                    report.raw.push((format!("grad_log_seed{seed}.csv"), r.result.to_csv()));
                    (r.modules, r.secs)
                }),
                Splitter::Ga => run_ga(&tm, &fx, &cfg.ga_config(seed), cfg.group_rule, false).map(|r| {
                    ga_plot.add(
                        format!("s{seed}"),
                        r.result.log.iter().map(|g| (g.generation as f64, g.best_acc)).collect(),
                    );
                    report.raw.push((format!("ga_log_seed{seed}.csv"), r.result.log_csv()));
                    (r.modules, r.secs)
                }),
            };
            let Some((modules, secs)) = record_failure(report, seed, splitter.name(), outcome) else { continue };
            let Some(pred) = record_failure(report, seed, "compose", cm_predictions(&modules, &fx.test)) else { continue };
            rows.push(ModularizeRow {
                seed,
                splitter,
                tm_acc,
                cm_acc: accuracy(&pred, fx.test.labels()),
                retained: retained_fraction(&modules, total),
                layer_retention: layer_retention(&modules, &widths),
                secs,
            });
            columns.push((format!("cm_{}", splitter.name()), pred));
        }
        let cols: Vec<(&str, &[usize])> = columns.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect();
        report.raw.push((format!("predictions_seed{seed}.csv"), predictions_csv(fx.test.labels(), &cols)));
    }
    modularize_tables(&rows, report);
    if !grad_plot.series.is_empty() {
        report.plots.push(("grad_convergence".into(), grad_plot));
    }
    if !ga_plot.series.is_empty() {
        report.plots.push(("ga_convergence".into(), ga_plot));
    }
}

fn modularize_tables(rows: &[ModularizeRow], report: &mut Report) {
    let mut t = Table::new(&["seed", "splitter", "tm_acc", "cm_acc", "loss_points", "retained_pct", "secs"]);
    let mut layers = Table::new(&["seed", "splitter", "layer", "retained"]);
    let mut plot = Plot::new("Retained kernels per layer", "layer", "retained fraction");
    for r in rows {
        t.push(vec![
            r.seed.to_string(),
            r.splitter.name().into(),
            f4(r.tm_acc),
            f4(r.cm_acc),
            f4(r.loss_points()),
            f4(r.retained * 100.0),
            format!("{:.1}", r.secs),
        ]);
        for (l, v) in r.layer_retention.iter().enumerate() {
            layers.push(vec![r.seed.to_string(), r.splitter.name().into(), l.to_string(), f4(*v)]);
        }
    }
    let mut summary = Table::new(&["splitter", "tm_acc", "cm_acc", "loss_points", "retained_pct"]);
    let mut means = Vec::new();
    for s in [Splitter::Ga, Splitter::Grad] {
        let sel: Vec<&ModularizeRow> = rows.iter().filter(|r| r.splitter == s).collect();
        if sel.is_empty() {
            continue;
        }
        let col = |f: &dyn Fn(&ModularizeRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<_>>();
        summary.push(vec![
            s.name().into(),
            mean_std(&col(&|r| r.tm_acc)),
            mean_std(&col(&|r| r.cm_acc)),
            mean_std(&col(&|r| r.loss_points())),
            mean_std(&col(&|r| r.retained * 100.0)),
        ]);
        let n_layers = sel[0].layer_retention.len();
        plot.add(
            s.name(),
            (0..n_layers).map(|l| (l as f64, mean(&col(&|r| r.layer_retention[l])))).collect(),
        );
        means.push((s, mean(&col(&|r| r.loss_points())), mean(&col(&|r| r.retained))));
    }
    for &(s, loss, kept) in &means {
        let (paper_loss, paper_kept, max_loss, max_kept) = match s {
            Splitter::Grad => ("0.58", "36.88%", 2.0, 0.70),
            Splitter::Ga => ("2.89", "56.76%", 5.0, 0.85),
        };
        report.summary.push(SummaryRow::check(
            &format!("{} CM accuracy loss (points)", s.label()),
            paper_loss,
            loss,
            &format!("<= {max_loss}"),
            loss <= max_loss,
        ));
        report.summary.push(SummaryRow::check(
            &format!("{} retained kernel fraction", s.label()),
            paper_kept,
            kept,
            &format!("<= {max_kept}"),
            kept <= max_kept,
        ));
    }
    if let [(_, _, ga), (_, _, grad)] = means[..] {
        report.summary.push(SummaryRow::check(
            "retained fraction, GradSplitter minus CNNSplitter",
            "-19.88%",
            grad - ga,
            "< 0",
            grad < ga,
        ));
    }
    report.tables.push(("modularization".into(), t));
    report.tables.push(("modularization_summary".into(), summary));
    report.tables.push(("layer_retention".into(), layers));
    if !plot.series.is_empty() {
        report.plots.push(("layer_retention".into(), plot));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeakKind {
    /// A two-convolution network.
    Simple,
    /// The strong architecture stopped at half its best epoch.
    Underfit,
    /// The strong architecture on a small slice of the data without weight decay.
    Overfit,
}

impl WeakKind {
    pub fn name(self) -> &'static str {
        match self {
            WeakKind::Simple => "simple",
            WeakKind::Underfit => "underfit",
            WeakKind::Overfit => "overfit",
        }
    }
}

/// Share of the training data the overfitting weak model sees.
pub const OVERFIT_FRACTION: f64 = 0.1;

pub fn train_weak(kind: WeakKind, family: Family, fx: &Fixture, strong: &TrainedModel, seed: u64) -> Result<TrainedModel> {
    let n = fx.n_classes();
    let side = fx.train.dims().0;
    let base = strong.train_config.clone().unwrap_or_else(|| TrainConfig::desk(20, seed));
    let family_spec = ArchitectureSpec::preset(family, Scale::Desk, n).with_input_side(side);
    match kind {
        WeakKind::Simple => train_tm(ArchitectureSpec::desk_simple(n).with_input_side(side), fx, &TrainConfig { seed, ..base }),
        WeakKind::Underfit => {
            let best = strong.metrics.as_ref().map_or(base.epochs, |m| m.best_epoch + 1);
            let cfg = TrainConfig {
                epochs: (best / 2).max(1),
                keep_best: false,
                seed,
                ..base
            };
            train_tm(family_spec, fx, &cfg)
        }
        WeakKind::Overfit => {
            let mut idx = Vec::new();
            for c in 0..n {
                let of = fx.train.indices_of_class(c);
                idx.extend_from_slice(&of[..((of.len() as f64 * OVERFIT_FRACTION).ceil() as usize).max(1)]);
            }
            let small = fx.train.subset(&idx, SplitTag::Train);
            let cfg = TrainConfig {
                weight_decay: 0.0,
                augment: false,
                keep_best: false,
                seed,
                ..base
            };
            train_on(family_spec, &small, &fx.valid, &fx.test, &cfg)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRow {
    pub seed: u64,
    pub weak: WeakKind,
    pub tc: usize,
    pub weak_acc: f64,
    pub tc_f1_before: f64,
    pub tc_f1_after: f64,
    pub non_tc_acc_before: f64,
    pub non_tc_acc_after: f64,
}

impl PatchRow {
    pub fn f1_gain(&self) -> f64 {
        self.tc_f1_after - self.tc_f1_before
    }

    /// Non-target accuracy lost to the patch, in points.
    pub fn non_tc_drop_points(&self) -> f64 {
        (self.non_tc_acc_before - self.non_tc_acc_after) * 100.0
    }
}

fn non_target_accuracy(pred: &[usize], labels: &[usize], tc: usize) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (&p, &y) in pred.iter().zip(labels) {
        if y != tc {
            n += 1;
            hit += (p == y) as usize;
        }
    }
    hit as f64 / n.max(1) as f64
}

/// The class the weak model recognizes worst (lowest F1 on validation data).
pub fn weakest_class(weak: &TrainedModel, valid: &LabeledDataset) -> Result<usize> {
    let pred = weak.net.predict_labels(valid)?;
    let f1: Vec<f64> = (0..weak.net.n_classes())
        .map(|c| -BinaryScore::for_class(&pred, valid.labels(), c).f1)
        .collect();
    Ok(argmax_f64(&f1))
}

/// Patches the weak model's worst class with the strong model's module for
/// it, calibrated on that class's training samples, and measures the effect
/// on the test split. Returns the row and the before/after predictions.
pub fn patch_experiment(
    seed: u64,
    kind: WeakKind,
    weak: &TrainedModel,
    strong_modules: &[SlicedModule],
    fx: &Fixture,
) -> Result<(PatchRow, Vec<usize>, Vec<usize>)> {
    let tc = weakest_class(weak, &fx.valid)?;
    let module = strong_modules
        .iter()
        .find(|m| m.class_id == tc)
        .ok_or_else(|| Error::Compose(format!("no strong module for class {tc}")))?;
    let calib = fx.train.subset(&fx.train.indices_of_class(tc), SplitTag::Train);
    let patched = patch(weak.clone(), module.clone(), tc, &calib)?;
    let labels = fx.test.labels();
    let before = weak.net.predict_labels(&fx.test)?;
    let after = patched.predict(&fx.test.full_batch())?;
    let row = PatchRow {
        seed,
        weak: kind,
        tc,
        weak_acc: accuracy(&before, labels),
        tc_f1_before: BinaryScore::for_class(&before, labels, tc).f1,
        tc_f1_after: BinaryScore::for_class(&after, labels, tc).f1,
        non_tc_acc_before: non_target_accuracy(&before, labels, tc),
        non_tc_acc_after: non_target_accuracy(&after, labels, tc),
    };
    Ok((row, before, after))
}

pub(super) fn patching(cfg: &BenchConfig, report: &mut Report) {
    report
        .notes
        .push("Weak and strong models share one synthetic class space; the paper's CIFAR-W class overlap is replicated structurally.".into());
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let Some(fx) = record_failure(report, seed, "fixture", fixture_for(cfg, seed)) else { continue };
        let Some(strong) = record_failure(report, seed, "train", model_for(cfg, &fx, seed)) else { continue };
        let Some(run) = record_failure(report, seed, "grad", run_grad(&strong, &fx.train, &fx.valid, &cfg.grad_config(seed))) else {
            continue;
        };
        for &kind in &cfg.weak_kinds {
            let weak = train_weak(kind, cfg.family, &fx, &strong, seed);
            let Some(weak) = record_failure(report, seed, kind.name(), weak) else { continue };
            let Some((row, before, after)) =
                record_failure(report, seed, "patch", patch_experiment(seed, kind, &weak, &run.modules, &fx))
            else {
                continue;
            };
            report.raw.push((
                format!("patch_{}_seed{seed}.csv", kind.name()),
                predictions_csv(fx.test.labels(), &[("weak", &before), ("patched", &after)]),
            ));
            rows.push(row);
        }
    }
    let mut t = Table::new(&[
        "seed",
        "weak",
        "tc",
        "weak_acc",
        "tc_f1_before",
        "tc_f1_after",
        "f1_gain",
        "non_tc_acc_before",
        "non_tc_acc_after",
    ]);
    for r in &rows {
        t.push(vec![
            r.seed.to_string(),
            r.weak.name().into(),
            r.tc.to_string(),
            f4(r.weak_acc),
            f4(r.tc_f1_before),
            f4(r.tc_f1_after),
            f4(r.f1_gain()),
            f4(r.non_tc_acc_before),
            f4(r.non_tc_acc_after),
        ]);
    }
    if !rows.is_empty() {
        let gains: Vec<f64> = rows.iter().map(PatchRow::f1_gain).collect();
        let drops: Vec<f64> = rows.iter().map(PatchRow::non_tc_drop_points).collect();
        report.summary.push(SummaryRow::check("TC F1 gain (mean)", "+11.47%", mean(&gains), ">= 0", mean(&gains) >= 0.0));
        report.summary.push(SummaryRow::check(
            "non-TC accuracy drop, points (max)",
            "-",
            drops.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            "<= 1",
            drops.iter().all(|&d| d <= 1.0),
        ));
    }
    report.tables.push(("patching".into(), t));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReuseRow {
    pub seed: u64,
    pub tm_acc: Vec<f64>,
    pub cm_acc: f64,
    /// Chosen subset model per class.
    pub best: Vec<usize>,
}

impl ReuseRow {
    pub fn best_tm(&self) -> f64 {
        self.tm_acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gain_points(&self) -> f64 {
        (self.cm_acc - self.best_tm()) * 100.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReuseSetup {
    pub family: Family,
    pub subsets: usize,
    pub concentration: f64,
    pub threshold: usize,
    pub train: TrainConfig,
    pub grad: crate::grad::GradConfig,
}

/// Trains one model per Dirichlet subset, splits each, picks the best module
/// per class on the module-evaluation split and composes them. Also returns
/// the F1 table behind the choice.
pub fn reuse_experiment(seed: u64, fx: &Fixture, setup: &ReuseSetup) -> Result<(ReuseRow, String)> {
    let (_, parts) = dirichlet_subsets(&fx.train, setup.subsets, setup.concentration, setup.threshold, seed)?;
    let n = fx.n_classes();
    let spec = ArchitectureSpec::preset(setup.family, Scale::Desk, n).with_input_side(fx.train.dims().0);
    let mut tm_acc = Vec::new();
    let mut candidates: Vec<Vec<SlicedModule>> = vec![Vec::new(); n];
    for (j, part) in parts.iter().enumerate() {
        let tcfg = TrainConfig {
            seed: seed.wrapping_mul(31).wrapping_add(j as u64),
            ..setup.train.clone()
        };
        let tm = train_on(spec.clone(), part, &fx.valid, &fx.test, &tcfg)?;
        tm_acc.push(tm.net.accuracy(&fx.test)?);
        let run = run_grad(&tm, part, &fx.valid, &crate::grad::GradConfig { seed: tcfg.seed, ..setup.grad.clone() })?;
        for m in run.modules {
            candidates[m.class_id].push(m);
        }
    }
    let rec = evaluate_and_recommend(&candidates, &fx.module_eval)?;
    let chosen: Vec<SlicedModule> = rec.best.iter().enumerate().map(|(c, &j)| candidates[c][j].clone()).collect();
    let cm = compose(chosen, Mode::Parallel)?;
    let row = ReuseRow {
        seed,
        tm_acc,
        cm_acc: cm.accuracy(&fx.test)?,
        best: rec.best.clone(),
    };
    Ok((row, rec.to_csv()))
}

pub(super) fn reuse(cfg: &BenchConfig, report: &mut Report) {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let Some(fx) = record_failure(report, seed, "fixture", fixture_for(cfg, seed)) else { continue };
        let setup = ReuseSetup {
            family: cfg.family,
            subsets: cfg.subsets,
            concentration: cfg.concentration,
            threshold: cfg.subset_threshold,
            train: cfg.train_config(seed),
            grad: cfg.grad_config(seed),
        };
        let Some((row, f1)) = record_failure(report, seed, "reuse", reuse_experiment(seed, &fx, &setup)) else { continue };
        report.raw.push((format!("f1_seed{seed}.csv"), f1));
        rows.push(row);
    }
    let j = cfg.subsets;
    let mut header: Vec<String> = vec!["seed".into()];
    header.extend((0..j).map(|k| format!("tm{k}_acc")));
    header.extend(["best_tm".into(), "cm_acc".into(), "gain_points".into(), "chosen".into()]);
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for r in &rows {
        let mut cells = vec![r.seed.to_string()];
        cells.extend(r.tm_acc.iter().map(|&a| f4(a)));
        cells.extend([
            f4(r.best_tm()),
            f4(r.cm_acc),
            f4(r.gain_points()),
            r.best.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
        ]);
        t.push(cells);
    }
    if !rows.is_empty() {
        let gains: Vec<f64> = rows.iter().map(ReuseRow::gain_points).collect();
        report.summary.push(SummaryRow::check(
            "CM minus best subset TM, points (mean)",
            "+5.18%",
            mean(&gains),
            ">= -0.5",
            mean(&gains) >= -0.5,
        ));
    }
    report.tables.push(("reuse".into(), t));
}

/// Modules split from one model, with the universe class each recognizes.
#[derive(Clone, Debug)]
pub struct ModulePool {
    /// `class_ids[k]` is the universe class of local label `k`.
    pub class_ids: Vec<usize>,
    pub modules: Vec<SlicedModule>,
}

impl ModulePool {
    pub fn module_for(&self, universe_class: usize) -> Option<&SlicedModule> {
        let local = self.class_ids.iter().position(|&c| c == universe_class)?;
        self.modules.iter().find(|m| m.class_id == local)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewTaskRow {
    pub pair: (usize, usize),
    pub rtm_acc: f64,
    pub cm_acc: f64,
}

impl NewTaskRow {
    pub fn gap_points(&self) -> f64 {
        (self.rtm_acc - self.cm_acc) * 100.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewTaskSetup {
    pub family: Family,
    pub per_class: usize,
    pub side: usize,
    pub train: TrainConfig,
}

/// For each pair of universe classes, builds a binary classifier from the
/// two pools' modules and compares it with a binary model trained from
/// scratch on the same data.
pub fn new_task_compose(pools: (&ModulePool, &ModulePool), pairs: &[(usize, usize)], setup: &NewTaskSetup, seed: u64) -> Result<Vec<NewTaskRow>> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, &(a, b)) in pairs.iter().enumerate() {
        if a == b {
            return Err(Error::arg(format!("class {a} paired with itself")));
        }
        let ma = pools.0.module_for(a).ok_or_else(|| Error::Compose(format!("no module for class {a} in the first pool")))?;
        let mb = pools.1.module_for(b).ok_or_else(|| Error::Compose(format!("no module for class {b} in the second pool")))?;
        let pair_seed = seed.wrapping_add(7919 * (i as u64 + 1));
        let fx = Fixture::synthetic(&[a, b], setup.per_class, setup.side, pair_seed)?;
        let cm = ComposedModel::from_ordered(vec![ma.clone(), mb.clone()], Mode::Parallel)?;
        let spec = ArchitectureSpec::preset(setup.family, Scale::Desk, 2).with_input_side(setup.side);
        let rtm = train_tm(spec, &fx, &TrainConfig { seed: pair_seed, ..setup.train.clone() })?;
        rows.push(NewTaskRow {
            pair: (a, b),
            rtm_acc: rtm.net.accuracy(&fx.test)?,
            cm_acc: cm.accuracy(&fx.test)?,
        });
    }
    Ok(rows)
}

/// Trains and splits one model for a task over `class_ids`.
pub fn task_pool(class_ids: &[usize], cfg: &BenchConfig, seed: u64) -> Result<ModulePool> {
    let fx = Fixture::synthetic(class_ids, cfg.per_class, cfg.side, seed)?;
    let spec = ArchitectureSpec::preset(cfg.family, Scale::Desk, class_ids.len()).with_input_side(cfg.side);
    let tm = train_tm(spec, &fx, &cfg.train_config(seed))?;
    let run = run_grad(&tm, &fx.train, &fx.valid, &cfg.grad_config(seed))?;
    Ok(ModulePool {
        class_ids: class_ids.to_vec(),
        modules: run.modules,
    })
}

pub(super) fn new_task(cfg: &BenchConfig, report: &mut Report) {
    let n = cfg.n_classes;
    let task_a: Vec<usize> = (0..n).collect();
    let task_b: Vec<usize> = (n..2 * n).collect();
    let pairs: Vec<(usize, usize)> = task_a
        .iter()
        .take(3)
        .flat_map(|&a| task_b.iter().take(3).map(move |&b| (a, b)))
        .collect();
    let mut t = Table::new(&["seed", "class_a", "class_b", "rtm_acc", "cm_acc", "gap_points"]);
    let mut gaps = Vec::new();
    for &seed in &cfg.seeds {
        let Some(pa) = record_failure(report, seed, "task A", task_pool(&task_a, cfg, seed)) else { continue };
        let Some(pb) = record_failure(report, seed, "task B", task_pool(&task_b, cfg, seed.wrapping_add(1))) else { continue };
        let setup = NewTaskSetup {
            family: cfg.family,
            per_class: cfg.per_class,
            side: cfg.side,
            train: cfg.train_config(seed),
        };
        let Some(rows) = record_failure(report, seed, "new task", new_task_compose((&pa, &pb), &pairs, &setup, seed)) else {
            continue;
        };
        for r in rows {
            gaps.push(r.gap_points());
            t.push(vec![
                seed.to_string(),
                r.pair.0.to_string(),
                r.pair.1.to_string(),
                f4(r.rtm_acc),
                f4(r.cm_acc),
                f4(r.gap_points()),
            ]);
        }
    }
    if !gaps.is_empty() {
        report
            .summary
            .push(SummaryRow::check("RTM minus CM, points (mean)", "2.65", mean(&gaps), "<= 6", mean(&gaps) <= 6.0));
    }
    report.tables.push(("new_task".into(), t));
}

/// Median of `runs` timed predictions after one warmup.
/// Median seconds per full prediction of `data` for each model, timing the
/// models in alternation so load drift hits all of them alike.
pub fn time_prediction(models: &[&ComposedModel], data: &LabeledDataset, runs: usize) -> Result<Vec<f64>> {
    let batch = data.full_batch();
    for cm in models {
        cm.raw_scores(&batch)?;
    }
    let mut secs = vec![Vec::with_capacity(runs); models.len()];
    for _ in 0..runs {
        for (cm, s) in models.iter().zip(&mut secs) {
            let t = Instant::now();
            std::hint::black_box(cm.raw_scores(&batch)?);
            s.push(t.elapsed().as_secs_f64());
        }
    }
    Ok(secs
        .into_iter()
        .map(|mut s| {
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub seed: u64,
    pub parallel_secs: f64,
    pub serial_secs: f64,
    pub identical: bool,
    pub tm_flops: u64,
    pub module_flops: Vec<u64>,
}

pub fn overhead(seed: u64, tm: &TrainedModel, modules: &[SlicedModule], data: &LabeledDataset, runs: usize) -> Result<OverheadRow> {
    let par = compose(modules.to_vec(), Mode::Parallel)?;
    let ser = par.clone().with_mode(Mode::Serial);
    let batch = data.full_batch();
    let identical = par.predict(&batch)? == ser.predict(&batch)?;
    let conv = FlopsConvention::default();
    let module_flops = modules
        .iter()
        .map(|m| count_flops(m.net.spec(), conv).map(|r| r.total))
        .collect::<Result<_>>()?;
    let secs = time_prediction(&[&par, &ser], data, runs)?;
    Ok(OverheadRow {
        seed,
        parallel_secs: secs[0],
        serial_secs: secs[1],
        identical,
        tm_flops: count_flops(tm.spec(), conv)?.total,
        module_flops,
    })
}

pub(super) fn overhead_scenario(cfg: &BenchConfig, report: &mut Report) {
    report.notes.push("Memory columns are n/a: the CPU substrate exposes no per-module memory accounting.".into());
    let mut t = Table::new(&["seed", "mode", "median_secs", "memory"]);
    let mut f = Table::new(&["seed", "model", "flops", "relative_to_tm"]);
    let mut wins = Vec::new();
    for &seed in &cfg.seeds {
        let Some(fx) = record_failure(report, seed, "fixture", fixture_for(cfg, seed)) else { continue };
        let Some(tm) = record_failure(report, seed, "train", model_for(cfg, &fx, seed)) else { continue };
        let Some(run) = record_failure(report, seed, "grad", run_grad(&tm, &fx.train, &fx.valid, &cfg.grad_config(seed))) else {
            continue;
        };
        let Some(row) = record_failure(report, seed, "timing", overhead(seed, &tm, &run.modules, &fx.test, cfg.timing_runs)) else {
            continue;
        };
        t.push(vec![seed.to_string(), "parallel".into(), format!("{:.6}", row.parallel_secs), "n/a".into()]);
        t.push(vec![seed.to_string(), "serial".into(), format!("{:.6}", row.serial_secs), "n/a".into()]);
        f.push(vec![seed.to_string(), "tm".into(), row.tm_flops.to_string(), f4(1.0)]);
        for (k, &m) in row.module_flops.iter().enumerate() {
            f.push(vec![seed.to_string(), format!("module{k}"), m.to_string(), f4(m as f64 / row.tm_flops as f64)]);
        }
        if !row.identical {
            report.failures.push(format!("seed {seed}: parallel and serial predictions differ"));
        }
        wins.push(row.parallel_secs <= row.serial_secs);
    }
    if !wins.is_empty() {
        report.summary.push(SummaryRow::check(
            "seeds where parallel is no slower than serial (fraction)",
            "parallel faster",
            wins.iter().filter(|&&w| w).count() as f64 / wins.len() as f64,
            "= 1",
            wins.iter().all(|&w| w),
        ));
    }
    report.summary.push(SummaryRow::info(
        "FLOPs convention",
        "-",
        FlopsConvention::default().describe().into(),
    ));
    report.tables.push(("timing".into(), t));
    report.tables.push(("flops".into(), f));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_accuracy_recomputes() {
        let csv = predictions_csv(&[0, 1, 1, 2], &[("a", &[0, 1, 0, 2]), ("b", &[1, 1, 1, 1])]);
        assert_eq!(accuracy_from_log(&csv, "a").unwrap(), 0.75);
        assert_eq!(accuracy_from_log(&csv, "b").unwrap(), 0.5);
        assert!(accuracy_from_log(&csv, "c").is_err());
    }

    #[test]
    fn non_target_accuracy_ignores_target_samples() {
        assert_eq!(non_target_accuracy(&[0, 0, 2, 1], &[0, 1, 2, 1], 1), 1.0);
    }

    #[test]
    fn self_pair_rejected() {
        let pool = ModulePool {
            class_ids: vec![0, 1],
            modules: Vec::new(),
        };
        let setup = NewTaskSetup {
            family: Family::Plain,
            per_class: 10,
            side: 16,
            train: TrainConfig::desk(1, 0),
        };
        let err = new_task_compose((&pool, &pool), &[(1, 1)], &setup, 0).unwrap_err();
        assert!(err.to_string().contains("itself"));
        let err = new_task_compose((&pool, &pool), &[(0, 1)], &setup, 0).unwrap_err();
        assert!(matches!(err, Error::Compose(_)));
    }
}
