//! Trains a desk CNN, decomposes it with gradient-trained kernel masks and
//! composes the resulting modules back into a classifier.
//!
//! cargo run --release --example grad_split -- [plain|res|ince] [epochs] [beta]

use modsplit::bench::{retained_fraction, run_grad, train_tm, Fixture};
use modsplit::composer::{compose, Mode};
use modsplit::grad::GradConfig;
use modsplit::zoo::{ArchitectureSpec, Family, Scale, TrainConfig};

fn main() -> modsplit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let family: Family = args.get(1).map(String::as_str).unwrap_or("plain").parse()?;
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let beta: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let fx = Fixture::desk(0)?;
    let tm = train_tm(ArchitectureSpec::preset(family, Scale::Desk, 4), &fx, &TrainConfig::desk(20, 0))?;
    let tm_acc = tm.net.accuracy(&fx.test)?;
    println!("{}: test accuracy {tm_acc:.4}", tm.spec().name);

    let cfg = GradConfig { beta, ..GradConfig::desk(epochs, 0) };
    let run = run_grad(&tm, &fx.train, &fx.valid, &cfg)?;
    for e in &run.result.log {
        println!(
            "epoch {:>3} {}  loss1 {:.4}  valid {:.4}  retained {:.3}",
            e.epoch,
            if e.joint { "joint" } else { "heads" },
            e.loss1,
            e.valid_acc,
            e.retained
        );
    }
    let kept = retained_fraction(&run.modules, tm.spec().total_kernels());
    let cm = compose(run.modules, Mode::Parallel)?;
    println!(
        "selected epoch {}: CM test accuracy {:.4} (loss {:.2} points), {:.1}% of kernels per module [{:.0}s]",
        run.result.selected_epoch,
        cm.accuracy(&fx.test)?,
        (tm_acc - cm.accuracy(&fx.test)?) * 100.0,
        kept * 100.0,
        run.secs
    );
    Ok(())
}
