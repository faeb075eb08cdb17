//! Answers the same question twice: once from retrieved memory units
//! alone, once from the source documents those units point back to.

use std::sync::Arc;

use structmem::answer::{AnswerMode, Answerer};
use structmem::builder::MemoryBuilder;
use structmem::gateway::{DemoProvider, Gateway, ResponseCache};
use structmem::model::{Corpus, Document, MemoryKind, RetrievalConfig, RetrievalStrategy};
use structmem::prompts::PromptSet;
use structmem::retrieval::Retriever;
use structmem::store::MemoryIndex;
use structmem::token::WordPunctCounter;

fn main() -> anyhow::Result<()> {
    let corpus = Corpus::new(
        "kiln-001",
        vec![
            Document::new(
                "kiln",
                "The Netherby kiln fires salt-glazed drainpipes. Firing takes nine days and \
                 the cones are read through a mica port.",
                "original",
            )?,
            Document::new(
                "clay",
                "Blue estuary clay is dug at low tide. Carts haul it up the tramway before \
                 the flats flood again.",
                "original",
            )?,
        ],
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
    let builder = MemoryBuilder::new(&gateway, &prompts, 16);
    let report = builder.build(&corpus, &[MemoryKind::AtomicFact])?;
    let index = MemoryIndex::build(report.units, &gateway, "kiln-001")?;

    let config = RetrievalConfig::new(RetrievalStrategy::SingleStep, 3, 2, 3, 1, 16)?;
    let question = "How long does a kiln firing take?";
    let outcome = Retriever::new(&index, &gateway, &prompts, config).retrieve(question)?;

    let answerer = Answerer::new(&gateway, &prompts).with_max_tokens(64);
    for mode in [AnswerMode::MemoryOnly, AnswerMode::MemoryDoc] {
        let result = answerer.answer_qa(question, &outcome.hits, mode, &corpus)?;
        println!("== {mode:?}");
        println!(
            "   context: {} items, {} tokens{}",
            result.context.included,
            result.context.tokens,
            if result.context.truncated {
                " (truncated)"
            } else {
                ""
            }
        );
        println!("   answer: {}\n", result.answer_text);
    }
    Ok(())
}
