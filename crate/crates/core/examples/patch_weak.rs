//! Patches the worst class of three kinds of weak model with a module split
//! from a strong model.
//!
//! cargo run --release --example patch_weak -- [grad epochs]

use modsplit::bench::{patch_experiment, run_grad, train_tm, train_weak, Fixture, WeakKind};
use modsplit::grad::GradConfig;
use modsplit::zoo::{ArchitectureSpec, Family, TrainConfig};

fn main() -> modsplit::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let fx = Fixture::desk(0)?;
    let strong = train_tm(ArchitectureSpec::desk_plain(4), &fx, &TrainConfig::desk(20, 0))?;
    println!("strong model test accuracy {:.4}", strong.net.accuracy(&fx.test)?);
    let modules = run_grad(&strong, &fx.train, &fx.valid, &GradConfig::desk(epochs, 0))?.modules;

    for kind in [WeakKind::Simple, WeakKind::Underfit, WeakKind::Overfit] {
        let weak = train_weak(kind, Family::Plain, &fx, &strong, 0)?;
        let (row, _, _) = patch_experiment(0, kind, &weak, &modules, &fx)?;
        println!(
            "{:>8}: acc {:.4}, class {} F1 {:.4} -> {:.4}, other classes {:.4} -> {:.4}",
            kind.name(),
            row.weak_acc,
            row.tc,
            row.tc_f1_before,
            row.tc_f1_after,
            row.non_tc_acc_before,
            row.non_tc_acc_after
        );
    }
    Ok(())
}
