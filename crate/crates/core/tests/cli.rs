//! Drives the `modsplit` binary end to end on a tiny problem.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn modsplit(home: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modsplit"))
        .env("MODSPLIT_HOME", home)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(home: &Path, args: &[&str]) -> Value {
    let out = modsplit(home, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_from_data_to_patch() {
    let tmp = tempfile::tempdir().unwrap();
    let (home, w) = (tmp.path().join("home"), tmp.path());
    let (train, test, odd) = (w.join("d/train.json"), w.join("d/test.json"), w.join("d/odd.json"));
    ok(&home, &["data", "synth", "--classes", "3", "--per-class", "120", "--seed", "1", "--name", "train", "--out", s(&w.join("d"))]);
    ok(&home, &["data", "synth", "--classes", "3", "--per-class", "40", "--seed", "2", "--name", "test", "--out", s(&w.join("d"))]);
    ok(&home, &["data", "synth", "--classes", "4", "--per-class", "10", "--seed", "3", "--name", "odd", "--out", s(&w.join("d"))]);

    let model = w.join("m");
    let train_args = ["train", "--arch", "plain", "--data", s(&train), "--epochs", "8", "--test", s(&test), "--out", s(&model)];
    let first = ok(&home, &train_args);
    assert!(first["artifact"].as_str().unwrap().starts_with("model-"));
    for f in ["spec.json", "params.bin", "metrics.json"] {
        assert!(model.join(f).exists(), "model dir lacks {f}");
    }
    assert_eq!(ok(&home, &train_args)["status"], "up to date");
    assert!(home.join("index.json").exists());

    // a model trained on three classes cannot be split with four-class data
    let bad = modsplit(&home, &["split-grad", "--model", s(&model), "--data", s(&odd), "--out", s(&w.join("bad"))]);
    assert_eq!(bad.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("class"));

    let grad_cfg = w.join("grad.json");
    std::fs::write(&grad_cfg, r#"{"version":1,"epochs":12,"lr":0.001,"beta":0.1,"seed":0}"#).unwrap();
    let grad = w.join("g");
    ok(&home, &["split-grad", "--model", s(&model), "--data", s(&train), "--cfg", s(&grad_cfg), "--out", s(&grad)]);
    assert!(grad.join("log.csv").exists());
    let bundles: Vec<_> = (0..3).map(|c| grad.join(format!("modules/class{c}"))).collect();
    bundles.iter().for_each(|b| assert!(b.join("bundle.json").exists()));

    let report = w.join("f1.csv");
    ok(&home, &["eval-modules", "--candidates", &format!("{}/modules/class*", s(&grad)), "--data", s(&test), "--report", s(&report)]);
    assert!(std::fs::read_to_string(&report).unwrap().lines().count() > 1);

    let composed = w.join("c");
    let mut args = vec!["compose", "--modules"];
    args.extend(bundles.iter().map(|b| s(b)));
    args.extend(["--mode", "serial", "--calib", s(&train), "--test", s(&test), "--out", s(&composed)]);
    ok(&home, &args);
    assert!(composed.join("composed.json").exists());

    let decoded = w.join("dec");
    ok(&home, &["decode", "--model", s(&model), "--mask", s(&bundles[1].join("mask.bits")), "--class", "1", "--out", s(&decoded)]);
    assert_eq!(
        std::fs::read_to_string(decoded.join("mask.bits")).unwrap(),
        std::fs::read_to_string(bundles[1].join("mask.bits")).unwrap()
    );

    let patched = w.join("p");
    ok(&home, &["patch", "--weak", s(&model), "--module", s(&bundles[2]), "--tc", "2", "--calib", s(&train), "--test", s(&test), "--out", s(&patched)]);
    assert!(patched.join("patched.json").exists());
}

#[test]
fn usage_and_argument_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(modsplit(tmp.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(modsplit(tmp.path(), &["train", "--arch", "plain"]).status.code(), Some(2));
    let missing = modsplit(tmp.path(), &["split-grad", "--model", "/nonexistent", "--data", "/nonexistent.json", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&missing.stderr).unwrap();
    assert!(err["error"]["kind"].is_string());
    assert_eq!(modsplit(tmp.path(), &["bench", "--scenario", "rq5"]).status.code(), Some(1));
}

#[test]
fn flops_of_paper_plain_model() {
    let tmp = tempfile::tempdir().unwrap();
    let v = ok(tmp.path(), &["flops", "--arch", "plain"]);
    let total = v["total"].as_u64().unwrap() as f64;
    assert!((total - 313.73e6).abs() / 313.73e6 < 0.01, "{total}");
}

#[test]
fn tiny_overhead_bench_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.json");
    let out = tmp.path().join("out");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "scenario": "rq5_overhead",
            "seeds": [0],
            "n_classes": 3,
            "per_class": 80,
            "train_epochs": 6,
            "grad_epochs": 10,
            "timing_runs": 2,
            "splitters": ["grad"],
        })
        .to_string(),
    )
    .unwrap();
    let res = modsplit(tmp.path().join("home").as_path(), &["bench", "--scenario", "rq5", "--cfg", s(&cfg), "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("rq5_overhead"));
    assert!(out.join("tables/timing.csv").exists());
}
