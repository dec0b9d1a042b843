//! Trains a desk-scale CNN on a synthetic 4-class dataset and reports
//! train/valid/test accuracy.
//!
//! cargo run --release --example train_model -- [plain|res|ince] [epochs]

use std::time::Instant;

use modsplit::datasets::{gen_synthetic, split_pair, SplitTag};
use modsplit::zoo::{build_model, train, ArchitectureSpec, Family, Scale, TrainConfig};

fn main() -> modsplit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let family: Family = args.get(1).map(String::as_str).unwrap_or("plain").parse()?;
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);

    let all = gen_synthetic(4, 500, 16, 7)?;
    let (train_set, valid) = split_pair(&all, 1, (SplitTag::Train, SplitTag::Valid))?;
    let test = gen_synthetic(4, 200, 16, 8)?.with_tag(SplitTag::Test);

    let spec = ArchitectureSpec::preset(family, Scale::Desk, 4);
    println!("{}: {} kernels", spec.name, spec.total_kernels());
    let t = Instant::now();
    let mut tm = train(build_model(spec, 1)?, &train_set, &valid, &TrainConfig::desk(epochs, 1))?;
    let test_acc = tm.evaluate_test(&test)?;
    let m = tm.metrics.as_ref().unwrap();
    for e in &m.history {
        println!("epoch {:>3}  loss {:.4}  valid {:.4}", e.epoch, e.train_loss, e.valid_acc);
    }
    println!(
        "train {:.4}  valid {:.4} (epoch {})  test {:.4}  [{:.1}s]",
        m.train_acc,
        m.valid_acc,
        m.best_epoch,
        test_acc,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
