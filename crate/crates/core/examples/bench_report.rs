//! Runs one bench scenario and writes its report directory.
//!
//! cargo run --release --example bench_report -- [rq1|rq2|rq3|rq4|rq5] [out dir] [seeds...]

use modsplit::bench::{run, BenchConfig, Scenario};

fn main() -> modsplit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scenario: Scenario = args.get(1).map(String::as_str).unwrap_or("rq5").parse()?;
    let out = args.get(2).cloned().unwrap_or_else(|| format!("target/bench/{}", scenario.name()));
    let seeds: Vec<u64> = args.iter().skip(3).filter_map(|s| s.parse().ok()).collect();
    let mut cfg = BenchConfig::new(scenario, if seeds.is_empty() { vec![0] } else { seeds });
    cfg.grad_epochs = 40;
    let report = run(&cfg)?;
    report.write(&out)?;
    for r in &report.summary {
        println!("{:<60} paper {:>10}  desk {:>10}  {:?}", r.metric, r.paper, r.desk, r.verdict);
    }
    for f in &report.failures {
        eprintln!("failed: {f}");
    }
    println!("report written to {out}/report.md");
    Ok(())
}
