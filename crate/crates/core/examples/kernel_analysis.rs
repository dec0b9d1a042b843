//! Per-class kernel importance, importance-ordered grouping and layer
//! sensitivity of a trained desk CNN.
//!
//! cargo run --release --example kernel_analysis -- [plain|res|ince]

use modsplit::analysis::{group_kernels, importance_all, layer_sensitivity, GroupRule};
use modsplit::bench::{train_tm, Fixture};
use modsplit::zoo::{ArchitectureSpec, Family, Scale, TrainConfig};

fn main() -> modsplit::Result<()> {
    let family: Family = std::env::args().nth(1).as_deref().unwrap_or("plain").parse()?;
    let fx = Fixture::desk(0)?;
    let tm = train_tm(ArchitectureSpec::preset(family, Scale::Desk, 4), &fx, &TrainConfig::desk(20, 0))?;

    let table = importance_all(&tm, &fx.train, Some(100), 0)?;
    let scores = table.class(0)?;
    for (l, layer) in scores.iter().enumerate() {
        let top = layer.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = layer.iter().sum::<f64>() / layer.len() as f64;
        println!("class 0, layer {l}: {} kernels, mean importance {mean:.4}, max {top:.4}", layer.len());
    }
    let plan = group_kernels(&tm, &table, 0, GroupRule::Fixed(4))?;
    for seg in &plan.segments {
        let sizes: Vec<usize> = seg.groups.iter().map(Vec::len).collect();
        println!("layers {:?}: group sizes {sizes:?}, most important group {:?}", seg.layers, seg.groups[0]);
    }
    let profile = layer_sensitivity(&tm, &fx.valid, &table.mean(), &[0.1, 0.3, 0.5, 0.7, 0.9], 0.05)?;
    println!("base validation accuracy {:.4}", profile.base_acc);
    for ((seg, curve), label) in profile.segments.iter().zip(&profile.acc_curve).zip(&profile.relabel(0.05)) {
        let c: Vec<String> = curve.iter().map(|a| format!("{a:.3}")).collect();
        println!("layers {seg:?}: {label:?}, accuracy as kernels drop: {}", c.join(" "));
    }
    Ok(())
}
