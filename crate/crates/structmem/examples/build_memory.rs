//! Builds all four structural memory kinds from a tiny two-document
//! corpus and prints the units, using the offline demo model.

use std::sync::Arc;

use structmem::builder::MemoryBuilder;
use structmem::gateway::{DemoProvider, Gateway, ResponseCache};
use structmem::model::{render_text, Corpus, Document, MemoryKind};
use structmem::prompts::PromptSet;
use structmem::token::WordPunctCounter;

fn main() -> anyhow::Result<()> {
    let corpus = Corpus::new(
        "obs-001",
        vec![
            Document::new(
                "doc-a",
                "The Meridian Observatory opened in 1871. Its brass telescope was cast in \
                 Leeds. The dome rotates on cannon bearings salvaged from a frigate.",
                "original",
            )?,
            Document::new(
                "doc-b",
                "Harbor records name the first keeper as Edwin Salt. Salt logged comet \
                 sightings every clear night for forty years.",
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
    let builder = MemoryBuilder::new(&gateway, &prompts, 24);

    let report = builder.build(&corpus, &MemoryKind::ALL)?;

    println!("corpus: {} documents", corpus.len());
    for (kind, count) in &report.kind_counts {
        println!("\n== {} ({count} units)", kind.label());
        for unit in report.units.iter().filter(|u| u.kind() == *kind) {
            println!("  [{}] {}", &unit.mem_id()[..8], render_text(unit));
        }
    }
    if report.unparsed_lines > 0 {
        println!("\nunparsed model lines: {}", report.unparsed_lines);
    }
    Ok(())
}
