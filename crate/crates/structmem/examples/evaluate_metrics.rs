//! Walks through answer normalization, exact match, and token F1, then
//! aggregates a handful of records into a run summary.

use structmem::eval::{
    aggregate, exact_match, normalize_answer, token_f1, EvalRecord, HyperPoint, StageTimings,
    TokenUsage,
};

fn main() -> anyhow::Result<()> {
    let cases = [
        ("The Eiffel Tower", vec!["eiffel tower"]),
        ("in 1871", vec!["1871"]),
        (
            "a brass telescope",
            vec!["brass telescope", "the telescope"],
        ),
        ("no idea", vec!["whale oil"]),
    ];
    println!(
        "{:<22} {:<22} {:>3} {:>6}",
        "prediction", "normalized", "em", "f1"
    );
    for (pred, golds) in &cases {
        let golds: Vec<String> = golds.iter().map(|g| g.to_string()).collect();
        println!(
            "{:<22} {:<22} {:>3} {:>6.3}",
            pred,
            normalize_answer(pred),
            exact_match(pred, &golds),
            token_f1(pred, &golds)
        );
    }

    let records: Vec<EvalRecord> = cases
        .iter()
        .enumerate()
        .map(|(i, (pred, golds))| {
            let golds: Vec<String> = golds.iter().map(|g| g.to_string()).collect();
            EvalRecord::qa(
                format!("q-{i}"),
                pred.to_string(),
                &golds,
                format!("cell/q-{i}"),
                StageTimings::default(),
                TokenUsage::default(),
            )
        })
        .collect();

    let point = HyperPoint {
        k: 100,
        r: 10,
        t: 50,
        n: 3,
        noise: 0,
    };
    let summary = aggregate("walkthrough", "chunk", "single_step", point, &records)?;
    println!("\naggregate over {} records:", summary.n_instances);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
