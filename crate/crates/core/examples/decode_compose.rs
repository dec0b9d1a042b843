//! Cuts modules out of a model with arbitrary kernel masks, checks them
//! against the masked forward pass and composes them in both execution modes.
//!
//! cargo run --release --example decode_compose

use rand::{Rng, SeedableRng};

use modsplit::composer::{compose, decode, masks_from_retained, Mode, Provenance};
use modsplit::datasets::gen_synthetic;
use modsplit::zoo::{build_model, ArchitectureSpec};

fn main() -> modsplit::Result<()> {
    let tm = build_model(ArchitectureSpec::desk_res(4), 1)?;
    let data = gen_synthetic(4, 50, 16, 3)?;
    let batch = data.full_batch();
    let widths: Vec<usize> = tm.net.conv.iter().map(|c| c.out_channels).collect();
    let plan = tm.net.plan();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut modules = Vec::new();
    for class in 0..4 {
        // residual partners share one draw
        let mut rows = vec![Vec::new(); widths.len()];
        for seg in &plan.segments {
            let mut row: Vec<bool> = (0..widths[seg[0]]).map(|_| rng.random_bool(0.5)).collect();
            row[0] = true;
            seg.iter().for_each(|&l| rows[l] = row.clone());
        }
        let bits = rows.concat();
        let m = decode(&tm, class, &bits, None, Provenance::Grad)?;
        let masked = tm.net.predict_masked(&batch, Some(&masks_from_retained(&bits, &widths)?))?;
        let sliced = m.net.predict(&batch)?;
        let worst = sliced
            .data
            .iter()
            .zip(&masked.data)
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0f32, f32::max);
        println!(
            "class {class}: {} of {} kernels, {} parameters, worst relative deviation from masked forward {worst:.2e}",
            m.retained_kernels(),
            tm.spec().total_kernels(),
            m.net.param_count()
        );
        modules.push(m);
    }
    let parallel = compose(modules, Mode::Parallel)?;
    let serial = parallel.clone().with_mode(Mode::Serial);
    assert_eq!(parallel.predict(&batch)?, serial.predict(&batch)?);
    println!("parallel and serial predictions agree on {} images", batch.len);
    Ok(())
}
