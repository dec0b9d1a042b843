//! Decomposes a desk CNN with the genetic search over kernel groups.
//!
//! cargo run --release --example ga_split -- [plain|res|ince] [generations] [alpha]

use modsplit::analysis::GroupRule;
use modsplit::bench::{retained_fraction, run_ga, train_tm, Fixture};
use modsplit::composer::{compose, Mode};
use modsplit::ga::GaConfig;
use modsplit::zoo::{ArchitectureSpec, Family, Scale, TrainConfig};

fn main() -> modsplit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let family: Family = args.get(1).map(String::as_str).unwrap_or("plain").parse()?;
    let generations: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let alpha: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.9);

    let fx = Fixture::desk(0)?;
    let tm = train_tm(ArchitectureSpec::preset(family, Scale::Desk, 4), &fx, &TrainConfig::desk(20, 0))?;
    let tm_acc = tm.net.accuracy(&fx.test)?;
    println!("{}: test accuracy {tm_acc:.4}", tm.spec().name);

    let cfg = GaConfig { generations, alpha, ..GaConfig::desk(0) };
    let run = run_ga(&tm, &fx, &cfg, GroupRule::default(), false)?;
    for (seg, label) in run.space.sensitivity.segments.iter().zip(&run.space.sensitivity.labels) {
        println!("layers {seg:?}: {label:?}");
    }
    for g in &run.result.log {
        println!(
            "generation {:>3}  fitness {:.4}  acc {:.4}  diff {:.4}  ({} evaluations)",
            g.generation, g.best_fitness, g.best_acc, g.best_diff, g.evaluations
        );
    }
    let kept = retained_fraction(&run.modules, tm.spec().total_kernels());
    let cm = compose(run.modules, Mode::Parallel)?;
    let acc = cm.accuracy(&fx.test)?;
    println!(
        "{:?}: CM test accuracy {acc:.4} (loss {:.2} points), {:.1}% of kernels per module [{:.0}s]",
        run.result.status,
        (tm_acc - acc) * 100.0,
        kept * 100.0,
        run.secs
    );
    Ok(())
}
