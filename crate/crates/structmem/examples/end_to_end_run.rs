//! Runs a full experiment from the sample config with the offline demo
//! model, then lists the artifacts and renders the report.

use structmem::harness::{report::render_report, run_experiment, ExperimentConfig, GatewayMode};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load("configs/sample.toml")?;
    cfg.output_dir = "runs/example_run".into();
    cfg.instance_limit = Some(3);
    cfg.memory_kind_sets = vec![vec!["chunk".into()], vec!["mixed".into()]];
    cfg.validate()?;

    let outcome = run_experiment(&cfg, GatewayMode::Mock)?;
    println!("run dir: {}", outcome.run_dir.display());
    println!("cells: {}", outcome.summaries.len());
    println!("quarantined questions: {}\n", outcome.quarantined);

    for name in [
        "manifest.json",
        "records.jsonl",
        "traces.jsonl",
        "failures.jsonl",
        "summary.csv",
        "cache.jsonl",
    ] {
        let path = outcome.run_dir.join(name);
        let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
        println!("  {name:<14} {size:>8} bytes");
    }

    println!("\n{}", render_report(&outcome.run_dir)?);
    Ok(())
}
