//! FLOPs of the architecture presets, and of a module that keeps half the kernels.
//!
//! cargo run --release --example flops

use modsplit::composer::{decode, Provenance};
use modsplit::zoo::{build_model, count_flops, ArchitectureSpec, Family, FlopsConvention, Scale};

fn main() -> modsplit::Result<()> {
    for scale in [Scale::Paper, Scale::Desk] {
        for family in [Family::Plain, Family::Res, Family::Ince] {
            let spec = ArchitectureSpec::preset(family, scale, 10);
            let mac = count_flops(&spec, FlopsConvention::MultiplyAccumulate)?;
            let two = count_flops(&spec, FlopsConvention::TwoPerMac)?;
            println!(
                "{:>12}: {:>5} kernels, {:>8.2}M FLOPs ({:.2}M at 2 per MAC), conv share {:.1}%",
                spec.name,
                spec.total_kernels(),
                mac.total as f64 / 1e6,
                two.total as f64 / 1e6,
                100.0 * mac.conv_total as f64 / mac.total as f64
            );
        }
    }
    let tm = build_model(ArchitectureSpec::desk_plain(4), 0)?;
    let bits: Vec<bool> = (0..tm.spec().total_kernels()).map(|k| k % 2 == 0).collect();
    let module = decode(&tm, 0, &bits, None, Provenance::Ga)?;
    let full = count_flops(tm.spec(), FlopsConvention::default())?;
    let half = count_flops(module.net.spec(), FlopsConvention::default())?;
    println!("half-kernel module: {:.1}% of the model's FLOPs", 100.0 * half.total as f64 / full.total as f64);
    for (a, b) in full.per_layer.iter().zip(&half.per_layer) {
        println!("  {:>8}: {:>9} -> {:>9}", a.layer_id, a.flops, b.flops);
    }
    Ok(())
}
