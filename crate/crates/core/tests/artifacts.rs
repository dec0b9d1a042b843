//! On-disk formats survive a round trip, and patching is unaffected by a
//! positive affine rescale of the patch's score.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use modsplit::composer::{compose, decode, load_bundle, load_composed, patch, save_bundle, save_composed, Mode, Provenance, SlicedModule};
use modsplit::datasets::{gen_synthetic, LabeledDataset};
use modsplit::ga::{load_genome, save_genome, KernelGenome};
use modsplit::grad::Head;
use modsplit::zoo::{build_model, load_model, save_model, ArchitectureSpec, TrainedModel};

fn widths(tm: &TrainedModel) -> Vec<usize> {
    tm.net.conv.iter().map(|c| c.out_channels).collect()
}

fn random_module(tm: &TrainedModel, class: usize, seed: u64, head: bool) -> SlicedModule {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = widths(tm);
    let mut rows = vec![Vec::new(); w.len()];
    for seg in &tm.net.plan().segments {
        let mut row: Vec<bool> = (0..w[seg[0]]).map(|_| rng.random_bool(0.6)).collect();
        row[0] = true;
        seg.iter().for_each(|&l| rows[l] = row.clone());
    }
    let head = head.then(|| Head::new(tm.net.n_classes(), &mut rng));
    decode(tm, class, &rows.concat(), head, Provenance::Grad).unwrap()
}

#[test]
fn model_round_trip_keeps_predictions_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let tm = build_model(ArchitectureSpec::desk_ince(3), 5).unwrap();
    save_model(dir.path().join("m"), &tm).unwrap();
    let back = load_model(dir.path().join("m")).unwrap();
    assert_eq!(back.hash(), tm.hash());
    let data = gen_synthetic(3, 10, 16, 1).unwrap();
    assert_eq!(back.net.predict(&data.full_batch()).unwrap(), tm.net.predict(&data.full_batch()).unwrap());
}

#[test]
fn bundle_round_trip_with_and_without_head() {
    let dir = tempfile::tempdir().unwrap();
    let tm = build_model(ArchitectureSpec::desk_res(4), 2).unwrap();
    for (i, head) in [false, true].into_iter().enumerate() {
        let m = random_module(&tm, i + 1, 40 + i as u64, head);
        let path = dir.path().join(format!("b{i}"));
        save_bundle(&path, &m, &widths(&tm), None).unwrap();
        let back = load_bundle(&path).unwrap();
        assert_eq!(back, m);
    }
}

#[test]
fn tampered_bundle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let tm = build_model(ArchitectureSpec::desk_plain(4), 2).unwrap();
    let m = random_module(&tm, 0, 9, false);
    save_bundle(dir.path(), &m, &widths(&tm), None).unwrap();
    let all_on = modsplit::bits::encode(&vec![true; widths(&tm).iter().sum()]);
    std::fs::write(dir.path().join("mask.bits"), all_on).unwrap();
    assert!(load_bundle(dir.path()).is_err());
}

#[test]
fn genome_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let bits: Vec<bool> = (0..77).map(|_| rng.random_bool(0.5)).collect();
    let mut g = KernelGenome::new(2, bits, 13);
    g.fitness = Some(0.8125);
    save_genome(dir.path().join("g.json"), "abc", &g).unwrap();
    let (back, hash) = load_genome(dir.path().join("g.json")).unwrap();
    assert_eq!(hash, "abc");
    assert_eq!((back.class_id, &back.bits, back.generation, back.fitness), (2, &g.bits, 13, Some(0.8125)));
}

#[test]
fn composed_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tm = build_model(ArchitectureSpec::desk_plain(3), 4).unwrap();
    let modules: Vec<_> = (0..3).map(|c| random_module(&tm, c, c as u64, c == 1)).collect();
    let mut paths = Vec::new();
    for (c, m) in modules.iter().enumerate() {
        let p = std::path::PathBuf::from(format!("class{c}"));
        save_bundle(dir.path().join(&p), m, &widths(&tm), None).unwrap();
        paths.push(p);
    }
    let cm = compose(modules, Mode::Serial).unwrap();
    save_composed(dir.path().join("composed.json"), &cm, &paths).unwrap();
    let back = load_composed(dir.path().join("composed.json")).unwrap();
    let data = gen_synthetic(3, 8, 16, 2).unwrap();
    assert_eq!(back.mode, Mode::Serial);
    assert_eq!(back.predict(&data.full_batch()).unwrap(), cm.predict(&data.full_batch()).unwrap());
}

fn class_only(ds: &LabeledDataset, class: usize) -> LabeledDataset {
    ds.subset(&ds.indices_of_class(class), ds.split_tag)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn patch_ignores_affine_rescale_of_score(scale in 0.05f32..20.0, shift in -5.0f32..5.0, seed in 0u64..1000) {
        let weak = build_model(ArchitectureSpec::desk_plain(3), seed).unwrap();
        let strong = build_model(ArchitectureSpec::desk_plain(3), seed + 1).unwrap();
        let tc = (seed % 3) as usize;
        let data = gen_synthetic(3, 12, 16, seed).unwrap();
        let calib = class_only(&data, tc);
        let module = random_module(&strong, tc, seed, false);

        let mut rescaled = module.clone();
        let fc = rescaled.net.fc.last_mut().unwrap();
        let n = fc.in_features;
        fc.weight[tc * n..(tc + 1) * n].iter_mut().for_each(|w| *w *= scale);
        fc.bias[tc] = fc.bias[tc] * scale + shift;

        let a = patch(weak.clone(), module, tc, &calib).unwrap();
        let b = patch(weak, rescaled, tc, &calib).unwrap();
        let batch = data.full_batch();
        let (oa, ob) = (a.outputs(&batch).unwrap(), b.outputs(&batch).unwrap());
        for (ra, rb) in oa.iter().zip(&ob) {
            prop_assert!((ra[tc] - rb[tc]).abs() < 1e-3 * (1.0 + ra[tc].abs()));
        }
        // argmax only compared where the patched entry is not a near tie
        let pa = a.predict(&batch).unwrap();
        let pb = b.predict(&batch).unwrap();
        for (r, row) in oa.iter().enumerate() {
            let mut s: Vec<f64> = row.clone();
            s.sort_by(|x, y| y.total_cmp(x));
            if s[0] - s[1] > 1e-3 {
                prop_assert_eq!(pa[r], pb[r]);
            }
        }
    }
}
