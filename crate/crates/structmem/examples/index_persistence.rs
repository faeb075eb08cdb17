//! Saves a memory index to disk, loads it back, and checks that search
//! results survive the round trip unchanged.

use std::sync::Arc;

use structmem::builder::MemoryBuilder;
use structmem::gateway::{DemoProvider, Gateway, ResponseCache};
use structmem::model::{Corpus, Document, MemoryKind};
use structmem::prompts::PromptSet;
use structmem::store::MemoryIndex;
use structmem::token::WordPunctCounter;

fn main() -> anyhow::Result<()> {
    let corpus = Corpus::new(
        "press-001",
        vec![
            Document::new(
                "press",
                "The cider press at Wolford barn is driven by an overshot wheel. Pomace is \
                 wrapped in horsehair cloths between oak racks.",
                "original",
            )?,
            Document::new(
                "orchard",
                "Russet apples ripen late in the walled orchard. Pickers drop the bruised \
                 fruit straight into the press cart.",
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
    let report = builder.build(&corpus, &MemoryKind::ALL)?;
    let index = MemoryIndex::build(report.units, &gateway, "press-001")?;

    let dir = std::env::temp_dir().join("structmem_example_index");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("press.index.jsonl");
    index.save(&path)?;
    println!(
        "saved {} units to {} ({} bytes)",
        index.len(),
        path.display(),
        std::fs::metadata(&path)?.len()
    );

    let loaded = MemoryIndex::load(&path)?;
    println!("loaded {} units back", loaded.len());

    let question = "What drives the cider press?";
    let before = index.search_text(question, &gateway, 3)?;
    let after = loaded.search_text(question, &gateway, 3)?;
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.unit.mem_id(), b.unit.mem_id());
        assert_eq!(a.score, b.score);
        println!(
            "  #{} {:.3} [{}] {}",
            b.rank,
            b.score,
            b.unit.kind().label(),
            structmem::model::render_text(&b.unit)
        );
    }
    println!("search results identical before and after reload");
    Ok(())
}
