//! Runs the three retrieval strategies over the same chunk index and
//! shows how their candidate traces differ.

use std::sync::Arc;

use structmem::builder::MemoryBuilder;
use structmem::gateway::{DemoProvider, Gateway, ResponseCache};
use structmem::model::{Corpus, Document, MemoryKind, RetrievalConfig, RetrievalStrategy};
use structmem::prompts::PromptSet;
use structmem::retrieval::Retriever;
use structmem::store::MemoryIndex;
use structmem::token::WordPunctCounter;

fn main() -> anyhow::Result<()> {
    let docs = [
        ("ferry", "The Grayling ferry crosses the sound twice daily. Its hull was re-riveted in 1954 after the ice season."),
        ("mill", "Aldercreek mill grinds barley for the island bakeries. The millstone came from a quarry at Harrow Point."),
        ("light", "The harbor light burns whale oil in winter demonstrations. A clockwork governor keeps the lamp turning."),
        ("postal", "Mail reaches the outer islands by sloop. The postmaster stamps each sack with a tar seal."),
    ];
    let corpus = Corpus::new(
        "island-001",
        docs.iter()
            .map(|(id, text)| Document::new(*id, *text, "original"))
            .collect::<Result<Vec<_>, _>>()?,
    )?;

    let embed_dim = 64;
    let gateway = Gateway::new(
        Arc::new(DemoProvider::new(embed_dim)),
        ResponseCache::in_memory(),
        WordPunctCounter::shared(),
        4096,
        embed_dim,
        2,
    );
    let prompts = PromptSet::builtin();
    let builder = MemoryBuilder::new(&gateway, &prompts, 24);
    let report = builder.build(&corpus, &[MemoryKind::Chunk])?;
    let index = MemoryIndex::build(report.units, &gateway, "island-001")?;
    println!("index holds {} chunks", index.len());

    let question = "What fuel does the harbor light burn in winter?";
    for strategy in [
        RetrievalStrategy::SingleStep,
        RetrievalStrategy::Rerank,
        RetrievalStrategy::Iterative,
    ] {
        let config = RetrievalConfig::new(strategy, 4, 2, 3, 2, 24)?;
        let retriever = Retriever::new(&index, &gateway, &prompts, config);
        let outcome = retriever.retrieve(question)?;
        println!("\n== {}", strategy.label());
        println!("   queries issued: {}", outcome.trace.queries.len());
        for (round, list) in outcome.trace.candidate_lists.iter().enumerate() {
            println!("   round {round}: {} candidates", list.len());
        }
        if !outcome.trace.fallbacks.is_empty() {
            println!("   fallbacks: {:?}", outcome.trace.fallbacks);
        }
        for hit in outcome.hits.iter().take(2) {
            let text = structmem::model::render_text(&hit.unit);
            let preview: String = text.chars().take(60).collect();
            println!("   #{} {:.3} {}", hit.rank, hit.score, preview);
        }
    }
    Ok(())
}
