//! Builds binary classifiers for a new task out of modules from two models
//! trained on disjoint class sets, against binary models trained from scratch.
//!
//! cargo run --release --example new_task

use modsplit::bench::{new_task_compose, task_pool, BenchConfig, NewTaskSetup, Scenario};

fn main() -> modsplit::Result<()> {
    let mut cfg = BenchConfig::new(Scenario::NewTask, vec![0]);
    cfg.grad_epochs = 40;
    let pool_a = task_pool(&[0, 1, 2, 3], &cfg, 0)?;
    let pool_b = task_pool(&[4, 5, 6, 7], &cfg, 1)?;
    let setup = NewTaskSetup {
        family: cfg.family,
        per_class: cfg.per_class,
        side: cfg.side,
        train: cfg.train_config(0),
    };
    let pairs = [(0, 4), (1, 6), (3, 7)];
    for r in new_task_compose((&pool_a, &pool_b), &pairs, &setup, 0)? {
        println!(
            "classes {:?}: retrained {:.4}, composed {:.4}, gap {:.2} points",
            r.pair,
            r.rtm_acc,
            r.cm_acc,
            r.gap_points()
        );
    }
    Ok(())
}
