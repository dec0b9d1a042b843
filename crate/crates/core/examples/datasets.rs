//! Synthetic datasets, on-disk manifests, 8:2 splits and Dirichlet subsets.
//!
//! cargo run --release --example datasets -- [concentration]

use modsplit::datasets::{dirichlet_subsets, gen_synthetic, load_manifest, save_dataset, split_pair, SplitTag};

fn main() -> modsplit::Result<()> {
    let concentration: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let all = gen_synthetic(4, 500, 16, 7)?;
    let (train, valid) = split_pair(&all, 1, (SplitTag::Train, SplitTag::Valid))?;
    println!("train {:?}, valid {:?}", train.counts_per_class(), valid.counts_per_class());

    let dir = std::env::temp_dir().join("modsplit-datasets-example");
    let manifest = save_dataset(&dir, "train", &train)?;
    let (m, back) = load_manifest(&manifest)?;
    println!("{} -> {} samples, sha256 {}", manifest.display(), back.len(), &m.sha256[..16]);

    let (plan, subsets) = dirichlet_subsets(&train, 3, concentration, 40, 0)?;
    for (j, (p, s)) in plan.proportions.iter().zip(&subsets).enumerate() {
        let p: Vec<String> = p.iter().map(|x| format!("{x:.2}")).collect();
        println!("subset {j}: proportions [{}], counts {:?}", p.join(", "), s.counts_per_class());
    }
    Ok(())
}
