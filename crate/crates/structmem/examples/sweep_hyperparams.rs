//! Sweeps the retrieval pool size K with the offline demo model and
//! prints the per-cell summary table the sweep writes.

use structmem::harness::{sweep, ExperimentConfig, GatewayMode, RetrievalGrid, SweepAxis};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig {
        dataset_path: "data/sample_qa.jsonl".into(),
        memory_kind_sets: vec![vec!["chunk".into()], vec!["summary".into()]],
        output_dir: "runs/example_sweep".into(),
        instance_limit: Some(4),
        ..ExperimentConfig::default()
    };
    cfg.retrieval = RetrievalGrid {
        k: vec![2, 4, 8],
        l_chunk_tokens: 32,
        ..RetrievalGrid::default()
    };
    cfg.provider.embed_dim = 64;
    cfg.provider.max_tokens_memory = 512;

    let outcome = sweep(&cfg, SweepAxis::K, GatewayMode::Mock)?;
    println!("sweep dir: {}\n", outcome.run_dir.display());
    println!(
        "{:<8} {:>4} {:>6} {:>6} {:>3}",
        "memory", "K", "EM", "F1", "n"
    );
    for s in &outcome.summaries {
        println!(
            "{:<8} {:>4} {:>6.2} {:>6.2} {:>3}",
            s.memory_kinds,
            s.hyperparameters.k,
            s.mean_em.unwrap_or(0.0),
            s.mean_f1.unwrap_or(0.0),
            s.n_instances
        );
    }
    println!(
        "\nfull table: {}",
        outcome.run_dir.join("summary.csv").display()
    );
    Ok(())
}
