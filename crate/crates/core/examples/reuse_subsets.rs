//! Trains models on class-imbalanced Dirichlet subsets, picks the best module
//! per class by F1 on held-out data and composes them.
//!
//! cargo run --release --example reuse_subsets -- [subsets] [concentration]

use modsplit::bench::{reuse_experiment, Fixture, ReuseSetup};
use modsplit::grad::GradConfig;
use modsplit::zoo::{Family, TrainConfig};

fn main() -> modsplit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let subsets: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let concentration: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let fx = Fixture::desk(0)?;
    let setup = ReuseSetup {
        family: Family::Plain,
        subsets,
        concentration,
        threshold: 40,
        train: TrainConfig::desk(20, 0),
        grad: GradConfig::desk(40, 0),
    };
    let (row, f1) = reuse_experiment(0, &fx, &setup)?;
    print!("F1 of every candidate module on the module-evaluation split:\n{f1}");
    for (j, a) in row.tm_acc.iter().enumerate() {
        println!("subset model {j}: test accuracy {a:.4}");
    }
    println!(
        "composed from {:?}: {:.4} ({:+.2} points over the best subset model)",
        row.best,
        row.cm_acc,
        row.gain_points()
    );
    Ok(())
}
