//! Desk-scale acceptance checks. Every test writes one `PASS`/`FAIL` line to
//! stderr (uncaptured) before asserting, so a full run lists all verdicts.
//!
//! Trained models and splitter runs are shared between tests and built on
//! first use. Tests take a global lock so the timing comparison runs alone.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modsplit::analysis::{group_by_scores, GroupRule};
use modsplit::bench::{
    mean, overhead, patch_experiment, retained_fraction, reuse_experiment, run_ga, run_grad, train_tm, train_weak, Fixture, GaRun, GradRun,
    ReuseSetup, WeakKind,
};
use modsplit::composer::{compose, decode, masks_from_retained, Mode, Provenance};
use modsplit::datasets::gen_synthetic;
use modsplit::ga::{
    build_search_space, diff, exhaustive_evaluation, fitness, genome_module, init_population, jaccard_distance, pruned_evaluation,
    retained_kernels, GaConfig, KernelGenome, ScoreTable,
};
use modsplit::grad::{forward, gradients, losses, GradConfig, GradState, Head, OptimState, Optimizer};
use modsplit::zoo::{build_model, count_flops, ArchitectureSpec, Family, FlopsConvention, Scale, TrainConfig, TrainedModel};

const SEEDS: [u64; 3] = [0, 1, 2];
const GRAD_EPOCHS: usize = 60;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, ok: bool, detail: String) {
    let line = format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(ok, "{line}");
}

struct Trained {
    seed: u64,
    fx: Fixture,
    tm: TrainedModel,
}

impl Trained {
    fn test_acc(&self) -> f64 {
        self.tm.net.accuracy(&self.fx.test).unwrap()
    }
}

fn trained() -> &'static [Trained] {
    static CELL: OnceLock<Vec<Trained>> = OnceLock::new();
    CELL.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let fx = Fixture::desk(seed).unwrap();
                let tm = train_tm(ArchitectureSpec::desk_plain(4), &fx, &TrainConfig::desk(20, seed)).unwrap();
                Trained { seed, fx, tm }
            })
            .collect()
    })
}

fn grad_runs(beta: f64) -> &'static [GradRun] {
    static DEFAULT: OnceLock<Vec<GradRun>> = OnceLock::new();
    static LOW: OnceLock<Vec<GradRun>> = OnceLock::new();
    let cell = if beta == 0.1 { &DEFAULT } else { &LOW };
    cell.get_or_init(|| {
        trained()
            .iter()
            .map(|t| {
                let cfg = GradConfig {
                    beta,
                    ..GradConfig::desk(GRAD_EPOCHS, t.seed)
                };
                run_grad(&t.tm, &t.fx.train, &t.fx.valid, &cfg).unwrap()
            })
            .collect()
    })
}

fn ga_runs() -> &'static [GaRun] {
    static CELL: OnceLock<Vec<GaRun>> = OnceLock::new();
    CELL.get_or_init(|| {
        trained()
            .iter()
            .map(|t| run_ga(&t.tm, &t.fx, &GaConfig::desk(t.seed), GroupRule::default(), false).unwrap())
            .collect()
    })
}

fn widths(tm: &TrainedModel) -> Vec<usize> {
    tm.net.conv.iter().map(|c| c.out_channels).collect()
}

/// Random retention with residual partners sharing a row and every segment non-empty.
fn random_retention(tm: &TrainedModel, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let w = widths(tm);
    let mut rows = vec![Vec::new(); w.len()];
    for seg in &tm.net.plan().segments {
        let width = w[seg[0]];
        let p = rng.random_range(0.1..0.9);
        let mut row: Vec<bool> = (0..width).map(|_| rng.random_bool(p)).collect();
        row[rng.random_range(0..width)] = true;
        seg.iter().for_each(|&l| rows[l] = row.clone());
    }
    rows.concat()
}

fn cm_loss_and_retention(runs: &[(f64, &[modsplit::composer::SlicedModule])]) -> (f64, f64) {
    let t = trained();
    let mut loss = Vec::new();
    let mut kept = Vec::new();
    for ((tm_acc, modules), tr) in runs.iter().zip(t) {
        let cm = compose(modules.to_vec(), Mode::Parallel).unwrap();
        loss.push((tm_acc - cm.accuracy(&tr.fx.test).unwrap()) * 100.0);
        kept.push(retained_fraction(modules, tr.tm.spec().total_kernels()));
    }
    (mean(&loss), mean(&kept))
}

#[test]
fn slice_matches_masked_forward() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let probes = gen_synthetic(4, 25, 16, 23).unwrap().full_batch();
    let (mut worst, mut worst_raw) = (0f64, 0f64);
    let mut checked = 0usize;
    let start = std::time::Instant::now();
    for (k, spec) in [ArchitectureSpec::desk_plain(4), ArchitectureSpec::desk_res(4), ArchitectureSpec::desk_ince(4)]
        .into_iter()
        .enumerate()
    {
        let tm = build_model(spec, 100 + k as u64).unwrap();
        let w = widths(&tm);
        for _ in 0..20 {
            let bits = random_retention(&tm, &mut rng);
            let class = rng.random_range(0..4);
            let module = decode(&tm, class, &bits, None, Provenance::Grad).unwrap();
            let masked = tm.net.predict_masked(&probes, Some(&masks_from_retained(&bits, &w).unwrap())).unwrap();
            let sliced = module.net.predict(&probes).unwrap();
            for (a, b) in sliced.data.iter().zip(&masked.data) {
                let (a, b) = (*a as f64, *b as f64);
                // unit floor: near-zero logits carry only summation-order noise
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
                worst_raw = worst_raw.max((a - b).abs() / a.abs().max(b.abs()).max(1e-12));
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "slice/mask equivalence",
        worst <= 1e-4 && secs < 300.0,
        format!("worst relative deviation {worst:.2e} over {checked} outputs (tol 1e-4; {worst_raw:.1e} without the unit floor), {secs:.1}s"),
    );
}

#[test]
fn all_ones_modules_reproduce_the_model() {
    let _g = serial();
    let t = &trained()[0];
    let mut mismatches = 0;
    let mut models = vec![("plain, trained", t.tm.clone())];
    models.push(("residual", build_model(ArchitectureSpec::desk_res(4), 3).unwrap()));
    models.push(("branched", build_model(ArchitectureSpec::desk_ince(4), 4).unwrap()));
    let mut details = Vec::new();
    for (name, tm) in &models {
        let want = tm.net.predict_labels(&t.fx.test).unwrap();
        let total = tm.spec().total_kernels();
        let from_masks: Vec<_> = (0..4).map(|c| decode(tm, c, &vec![true; total], None, Provenance::Grad).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let from_genomes: Vec<_> = (0..4)
            .map(|c| {
                let scores: Vec<Vec<f64>> = widths(tm).iter().map(|&w| (0..w).map(|_| rng.random()).collect()).collect();
                let grouping = group_by_scores(tm, &scores, Some(c), GroupRule::default());
                genome_module(tm, &grouping, &KernelGenome::new(c, vec![true; grouping.n_bits()], 0)).unwrap()
            })
            .collect();
        for (kind, modules) in [("mask", from_masks), ("genome", from_genomes)] {
            let got = compose(modules, Mode::Parallel).unwrap().predict(&t.fx.test.full_batch()).unwrap();
            let m = got.iter().zip(&want).filter(|(a, b)| a != b).count();
            mismatches += m;
            details.push(format!("{name}/{kind} {m}"));
        }
    }
    verdict(
        "identity composition",
        mismatches == 0,
        format!("mismatched predictions on {} test images: {}", t.fx.test.len(), details.join(", ")),
    );
}

#[test]
fn head_gradients_match_finite_differences() {
    let _g = serial();
    let tm = build_model(ArchitectureSpec::desk_plain(4), 11).unwrap();
    let data = gen_synthetic(4, 4, 16, 5).unwrap();
    let batch = data.full_batch();
    let labels = data.labels();
    let state = GradState::init(&tm, &mut ChaCha8Rng::seed_from_u64(0));
    let g = gradients(&state, &tm, &batch, labels, true, 0.1).unwrap();
    let h = 1e-4;
    let mut worst = 0f64;
    for k in 0..state.n() {
        let analytic: Vec<f64> = {
            let hg = &g.heads[k];
            hg.w1.iter().chain(&hg.b1).chain(&hg.w2).copied().chain([hg.b2]).collect()
        };
        let base = state.heads[k].params();
        for (i, &a) in analytic.iter().enumerate() {
            let loss_at = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                let mut s = state.clone();
                s.heads[k] = Head::from_params(state.n(), &p).unwrap();
                losses(&forward(&s, &tm, &batch).unwrap(), labels, &s.masks).0
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let scale = a.abs().max(fd.abs());
            if scale > 1e-9 {
                worst = worst.max((a - fd).abs() / scale);
            }
        }
    }

    // masks: clipped straight-through entries, so no step moves a mask by more than lr
    let lr = GradConfig::desk(1, 0).mask_lr();
    let mg = g.masks.as_ref().unwrap();
    let max_grad = mg.iter().flatten().fold(0f64, |m, v| m.max(v.abs()));
    let mut max_step = 0f64;
    for kind in [Optimizer::Sgd, Optimizer::Adam] {
        for (k, grad) in mg.iter().enumerate() {
            let mut m = state.masks.masks[k].clone();
            OptimState::new(kind, m.len()).apply(&mut m, grad, lr);
            for (a, b) in m.iter().zip(&state.masks.masks[k]) {
                max_step = max_step.max((a - b).abs() as f64);
            }
        }
    }
    let ok = worst <= 1e-3 && max_grad <= 1.0 && max_step <= lr * (1.0 + 1e-4);
    verdict(
        "STE/head gradient check",
        ok,
        format!("worst head relative error {worst:.2e} (tol 1e-3), max |mask grad| {max_grad:.3}, max mask step {max_step:.2e} vs lr {lr}"),
    );
}

fn as_set(bits: &[bool]) -> BTreeSet<usize> {
    bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

fn oracle_jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    let inter = a.intersection(b).count();
    if union == 0 {
        0.0
    } else {
        (union - inter) as f64 / union as f64
    }
}

#[test]
fn set_metrics_match_enumeration_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut bad = 0;
    let mut fitness_out = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..80);
        let density = rng.random_range(0.0..1.0);
        let draw = |rng: &mut ChaCha8Rng| (0..len).map(|_| rng.random_bool(density)).collect::<Vec<bool>>();
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let (sa, sb, sc) = (as_set(&a), as_set(&b), as_set(&c));
        if jaccard_distance(&a, &b) != oracle_jaccard(&sa, &sb) {
            bad += 1;
        }
        let pairs = oracle_jaccard(&sa, &sb) + oracle_jaccard(&sa, &sc) + oracle_jaccard(&sb, &sc);
        let d = diff(&[&a, &b, &c]);
        if d != pairs / 3.0 {
            bad += 1;
        }
        let f = fitness(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0), d);
        if !(0.0..=1.0).contains(&f) {
            fitness_out += 1;
        }
    }
    verdict(
        "jaccard/Diff oracle",
        bad == 0 && fitness_out == 0,
        format!("{bad} mismatches over 1000 pairs and 1000 triples, {fitness_out} fitness values outside [0,1]"),
    );
}

#[test]
fn pruned_evaluation_is_near_exhaustive() {
    let _g = serial();
    let t = &trained()[0];
    let cfg = GaConfig::desk(0);
    let space = build_search_space(&t.tm, &t.fx.train, &t.fx.valid, GroupRule::default(), false, 0.05, 0).unwrap();
    let batch = t.fx.valid.full_batch();
    let n_layers = t.tm.net.conv.len();
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let pops = init_population(&space.groupings, &space.sensitivity, cfg.init, 4, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut scores = Vec::new();
        let mut kernels = Vec::new();
        for (c, pop) in pops.iter().enumerate() {
            let grouping = &space.groupings[c];
            scores.push(pop.iter().map(|g| genome_module(&t.tm, grouping, g).unwrap().scores(&batch).unwrap()).collect());
            kernels.push(pop.iter().map(|g| retained_kernels(grouping, &g.bits, n_layers).unwrap()).collect());
        }
        let table = ScoreTable {
            scores,
            kernels,
            labels: t.fx.valid.labels().to_vec(),
        };
        let pruned = pruned_evaluation(&table, cfg.top, cfg.alpha, &[]).unwrap().best().fitness;
        let exhaustive = exhaustive_evaluation(&table, cfg.alpha).unwrap().best().fitness;
        ratios.push(pruned / exhaustive);
    }
    let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        "pruned vs exhaustive",
        worst >= 0.95,
        format!("worst pruned/exhaustive best-fitness ratio {worst:.4} over 5 seeds (N=4, N_I=4, need >= 0.95)"),
    );
}

#[test]
fn gradsplitter_desk_run() {
    let _g = serial();
    let runs = grad_runs(0.1);
    let pairs: Vec<_> = trained().iter().zip(runs).map(|(t, r)| (t.test_acc(), r.modules.as_slice())).collect();
    let (loss, kept) = cm_loss_and_retention(&pairs);
    let secs: f64 = runs.iter().map(|r| r.secs).sum();
    verdict(
        "GradSplitter desk run",
        loss <= 2.0 && kept <= 0.7 && secs < 20.0 * 60.0,
        format!(
            "mean CM loss {loss:.2} points (<= 2), mean retained {kept:.3} (<= 0.7), {secs:.0}s for {} seeds; paper 0.58% at 36.88%",
            SEEDS.len()
        ),
    );
}

#[test]
fn cnnsplitter_desk_run() {
    let _g = serial();
    let ga = ga_runs();
    let pairs: Vec<_> = trained().iter().zip(ga).map(|(t, r)| (t.test_acc(), r.modules.as_slice())).collect();
    let (loss, kept) = cm_loss_and_retention(&pairs);
    let grad_pairs: Vec<_> = trained().iter().zip(grad_runs(0.1)).map(|(t, r)| (t.test_acc(), r.modules.as_slice())).collect();
    let (_, grad_kept) = cm_loss_and_retention(&grad_pairs);
    let secs: f64 = ga.iter().map(|r| r.secs).sum();
    verdict(
        "CNNSplitter desk run",
        loss <= 5.0 && kept <= 0.85 && grad_kept < kept && secs < 30.0 * 60.0,
        format!(
            "mean CM loss {loss:.2} points (<= 5), mean retained {kept:.3} (<= 0.85), GradSplitter retained {grad_kept:.3} (must be lower), {secs:.0}s; paper 56.76% vs 36.88%"
        ),
    );
}

#[test]
fn higher_beta_retains_fewer_kernels() {
    let _g = serial();
    let kept = |runs: &[GradRun]| {
        mean(
            &runs
                .iter()
                .zip(trained())
                .map(|(r, t)| retained_fraction(&r.modules, t.tm.spec().total_kernels()))
                .collect::<Vec<_>>(),
        )
    };
    let (hi, lo) = (kept(grad_runs(0.1)), kept(grad_runs(0.01)));
    verdict(
        "beta trend",
        hi <= lo,
        format!("mean retained at beta 0.1 {hi:.3} vs beta 0.01 {lo:.3}; paper 41.22% vs 54.37%"),
    );
}

#[test]
fn patching_a_simple_weak_model() {
    let _g = serial();
    let mut gains = Vec::new();
    let mut drops = Vec::new();
    for (t, run) in trained().iter().zip(grad_runs(0.1)) {
        let weak = train_weak(WeakKind::Simple, Family::Plain, &t.fx, &t.tm, t.seed).unwrap();
        let (row, _, _) = patch_experiment(t.seed, WeakKind::Simple, &weak, &run.modules, &t.fx).unwrap();
        gains.push(row.f1_gain());
        drops.push(row.non_tc_drop_points());
    }
    let worst_drop = drops.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    verdict(
        "patching trend",
        mean(&gains) >= 0.0 && worst_drop <= 1.0,
        format!(
            "TC F1 gain per seed {:?} (mean {:.4} >= 0), worst non-TC drop {worst_drop:.2} points (<= 1); paper +11.47% F1",
            gains.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>(),
            mean(&gains)
        ),
    );
}

#[test]
fn reuse_beats_best_subset_model() {
    let _g = serial();
    let mut gains = Vec::new();
    for &seed in &SEEDS {
        let fx = &trained()[seed as usize].fx;
        let setup = ReuseSetup {
            family: Family::Plain,
            subsets: 3,
            concentration: 1.0,
            threshold: 40,
            train: TrainConfig::desk(20, seed),
            grad: GradConfig::desk(GRAD_EPOCHS, seed),
        };
        let (row, _) = reuse_experiment(seed, fx, &setup).unwrap();
        gains.push(row.gain_points());
    }
    verdict(
        "reuse trend",
        mean(&gains) >= -0.5,
        format!(
            "CM minus best subset TM per seed {:?} points (mean {:.2} >= -0.5); paper +5.18%",
            gains.iter().map(|g| format!("{g:.2}")).collect::<Vec<_>>(),
            mean(&gains)
        ),
    );
}

#[test]
fn flops_accounting() {
    let _g = serial();
    let conv = FlopsConvention::default();
    let mut exact = true;
    for spec in [ArchitectureSpec::desk_plain(4), ArchitectureSpec::desk_res(4), ArchitectureSpec::desk_ince(4)] {
        let tm = build_model(spec, 0).unwrap();
        let m = decode(&tm, 1, &vec![true; tm.spec().total_kernels()], None, Provenance::Ga).unwrap();
        exact &= count_flops(m.net.spec(), conv).unwrap().conv_total == count_flops(tm.spec(), conv).unwrap().conv_total;
    }
    let paper = count_flops(&ArchitectureSpec::preset(Family::Plain, Scale::Paper, 10), conv).unwrap().total as f64;
    let rel = (paper - 313.7e6).abs() / 313.7e6;
    verdict(
        "FLOPs",
        exact && rel <= 0.05,
        format!("all-ones module conv FLOPs equal the model's: {exact}; paper-scale plain {:.2}M vs 313.7M ({:.2}% off)", paper / 1e6, rel * 100.0),
    );
}

#[test]
fn execution_modes_agree_and_parallel_is_not_slower() {
    let _g = serial();
    let t = &trained()[0];
    let modules = &grad_runs(0.1)[0].modules;
    let inputs = gen_synthetic(4, 250, 16, 99).unwrap().full_batch();
    let par = compose(modules.clone(), Mode::Parallel).unwrap();
    let ser = par.clone().with_mode(Mode::Serial);
    let same = par.predict(&inputs).unwrap() == ser.predict(&inputs).unwrap();
    let row = overhead(t.seed, &t.tm, modules, &t.fx.test, 7).unwrap();
    verdict(
        "execution modes",
        same && row.identical && row.parallel_secs <= row.serial_secs,
        format!(
            "identical on {} inputs: {same}; median parallel {:.4}s vs serial {:.4}s on the desk test set",
            inputs.len, row.parallel_secs, row.serial_secs
        ),
    );
}
