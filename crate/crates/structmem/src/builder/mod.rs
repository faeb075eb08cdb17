//! Turns documents into memory units. Chunking is pure and span-based;
//! triples, facts, and summaries come from model calls through the
//! gateway. Documents that do not fit the input window are processed in
//! window-sized parts, and summaries of oversized documents fold
//! hierarchically: summarize each part, then summarize the summaries.

pub mod parse;

use std::collections::HashSet;
use std::ops::Range;

use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{Corpus, Document, MemoryKind, MemoryPayload, MemoryUnit, ModelError};
use crate::prompts::PromptSet;
use crate::token::TokenCounter;
use parse::{parse_fact_lines, parse_triples};

/// Tokens reserved on top of the rendered template when deciding whether
/// a document fits the input window.
const PROMPT_MARGIN: usize = 16;
/// How many tokens back from a forced cut the chunker looks for a
/// sentence end.
const SENTENCE_LOOKBACK: usize = 64;
const MAX_FOLD_LEVELS: usize = 5;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("document {doc_id}: {source}")]
    Doc {
        doc_id: String,
        #[source]
        source: Box<BuildError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model output contained no parseable {kind} lines: {sample:?}")]
    ExtractionParse { kind: &'static str, sample: String },
    #[error("summary did not shrink after {0} fold levels")]
    SummaryFoldDepth(usize),
    #[error("no memory kinds requested")]
    NoKinds,
}

/// Byte ranges of consecutive chunks of at most `max_tokens` tokens.
/// Cuts prefer a sentence end within the last `SENTENCE_LOOKBACK` tokens
/// of the limit; otherwise they fall exactly on the limit.
pub fn chunk_ranges(
    counter: &dyn TokenCounter,
    text: &str,
    max_tokens: usize,
) -> Vec<Range<usize>> {
    assert!(max_tokens > 0, "chunk size must be positive");
    let spans = counter.spans(text);
    let mut ranges = Vec::new();
    let mut pos = 0;
    while pos < spans.len() {
        let hard_end = (pos + max_tokens).min(spans.len());
        let mut cut = hard_end;
        if hard_end < spans.len() {
            let floor = (pos + 1).max(hard_end.saturating_sub(SENTENCE_LOOKBACK));
            for candidate in (floor..=hard_end).rev() {
                let token = spans[candidate - 1].slice(text);
                if matches!(token, "." | "!" | "?") {
                    cut = candidate;
                    break;
                }
            }
        }
        ranges.push(spans[pos].start..spans[cut - 1].end);
        pos = cut;
    }
    ranges
}

#[derive(Debug)]
pub struct BuildReport {
    pub units: Vec<MemoryUnit>,
    /// Non-empty model-output lines that failed to parse.
    pub unparsed_lines: usize,
    pub kind_counts: Vec<(MemoryKind, usize)>,
}

pub struct MemoryBuilder {
    gateway: Gateway,
    prompts: PromptSet,
    l_chunk_tokens: usize,
    max_tokens: usize,
    temperature: f64,
}

enum Slot {
    Triples,
    Facts,
    Summary,
}

impl MemoryBuilder {
    pub fn new(gateway: &Gateway, prompts: &PromptSet, l_chunk_tokens: usize) -> Self {
        assert!(l_chunk_tokens > 0, "chunk size must be positive");
        Self {
            gateway: gateway.clone(),
            prompts: prompts.clone(),
            l_chunk_tokens,
            max_tokens: 2048,
            temperature: 0.2,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    fn count(&self, text: &str) -> usize {
        self.gateway.token_counter().count(text)
    }

    fn render(&self, slot: &Slot, document: &str) -> (String, String) {
        match slot {
            Slot::Triples => self.prompts.triples(document),
            Slot::Facts => self.prompts.atomic_facts(document),
            Slot::Summary => self.prompts.summary(document),
        }
    }

    /// Prompt tokens consumed by the template itself, plus margin.
    fn overhead(&self, slot: &Slot) -> usize {
        let (system, user) = self.render(slot, "");
        self.count(&system) + self.count(&user) + PROMPT_MARGIN
    }

    fn call(&self, system: String, user: String) -> Result<String, BuildError> {
        let request =
            ChatRequest::new(system, user, self.max_tokens)?.with_temperature(self.temperature)?;
        Ok(self.gateway.complete(&request)?)
    }

    /// The document text if it fits the window, otherwise window-sized
    /// parts of it.
    fn window_parts(&self, slot: &Slot, text: &str) -> Result<Vec<String>, BuildError> {
        let overhead = self.overhead(slot);
        let window = self.gateway.window();
        if overhead + self.count(text) <= window {
            return Ok(vec![text.to_string()]);
        }
        let budget = window.saturating_sub(overhead);
        if budget == 0 {
            return Err(BuildError::Gateway(GatewayError::ContextOverflow {
                tokens: overhead,
                window,
            }));
        }
        let counter = self.gateway.token_counter();
        Ok(chunk_ranges(&*counter, text, budget)
            .into_iter()
            .map(|r| text[r].to_string())
            .collect())
    }

    pub fn chunk_document(&self, doc: &Document) -> Result<Vec<MemoryUnit>, BuildError> {
        let counter = self.gateway.token_counter();
        let mut units = Vec::new();
        for range in chunk_ranges(&*counter, &doc.text, self.l_chunk_tokens) {
            units.push(MemoryUnit::new(
                MemoryPayload::Chunk(doc.text[range].to_string()),
                vec![doc.doc_id.clone()],
            )?);
        }
        Ok(units)
    }

    pub fn extract_triples(&self, doc: &Document) -> Result<(Vec<MemoryUnit>, usize), BuildError> {
        let mut units = Vec::new();
        let mut seen = HashSet::new();
        let mut unparsed = 0;
        for part in self.window_parts(&Slot::Triples, &doc.text)? {
            let (system, user) = self.prompts.triples(&part);
            let raw = self.call(system, user)?;
            let (triples, skipped) = parse_triples(&raw);
            if triples.is_empty() {
                return Err(BuildError::ExtractionParse {
                    kind: "triple",
                    sample: sample(&raw),
                });
            }
            unparsed += skipped;
            for triple in triples {
                let unit =
                    MemoryUnit::new(MemoryPayload::Triple(triple), vec![doc.doc_id.clone()])?;
                if seen.insert(unit.mem_id().to_string()) {
                    units.push(unit);
                }
            }
        }
        Ok((units, unparsed))
    }

    pub fn extract_atomic_facts(
        &self,
        doc: &Document,
    ) -> Result<(Vec<MemoryUnit>, usize), BuildError> {
        let mut units = Vec::new();
        let mut seen = HashSet::new();
        let mut unparsed = 0;
        for part in self.window_parts(&Slot::Facts, &doc.text)? {
            let (system, user) = self.prompts.atomic_facts(&part);
            let raw = self.call(system, user)?;
            let (facts, skipped) = parse_fact_lines(&raw);
            if facts.is_empty() {
                return Err(BuildError::ExtractionParse {
                    kind: "atomic fact",
                    sample: sample(&raw),
                });
            }
            unparsed += skipped;
            for fact in facts {
                let unit =
                    MemoryUnit::new(MemoryPayload::AtomicFact(fact), vec![doc.doc_id.clone()])?;
                if seen.insert(unit.mem_id().to_string()) {
                    units.push(unit);
                }
            }
        }
        Ok((units, unparsed))
    }

    /// One summary per document. A document larger than the window is
    /// summarized in parts and the concatenated partial summaries are
    /// summarized again, as many levels as needed.
    pub fn summarize(&self, doc: &Document) -> Result<MemoryUnit, BuildError> {
        let overhead = self.overhead(&Slot::Summary);
        let window = self.gateway.window();
        let mut current = doc.text.clone();
        for _ in 0..MAX_FOLD_LEVELS {
            if overhead + self.count(&current) <= window {
                let (system, user) = self.prompts.summary(&current);
                let raw = self.call(system, user)?;
                let text = raw.trim();
                if text.is_empty() {
                    return Err(BuildError::ExtractionParse {
                        kind: "summary",
                        sample: sample(&raw),
                    });
                }
                return Ok(MemoryUnit::new(
                    MemoryPayload::Summary(text.to_string()),
                    vec![doc.doc_id.clone()],
                )?);
            }
            let mut partials = Vec::new();
            for part in self.window_parts(&Slot::Summary, &current)? {
                let (system, user) = self.prompts.summary(&part);
                let raw = self.call(system, user)?;
                let text = raw.trim();
                if text.is_empty() {
                    return Err(BuildError::ExtractionParse {
                        kind: "summary",
                        sample: sample(&raw),
                    });
                }
                partials.push(text.to_string());
            }
            current = partials.join("\n\n");
        }
        Err(BuildError::SummaryFoldDepth(MAX_FOLD_LEVELS))
    }

    /// Builds the requested kinds for every document, kind-major in the
    /// canonical order (chunks, triples, facts, summaries) and
    /// corpus-order within a kind, deduplicated by mem_id.
    pub fn build(&self, corpus: &Corpus, kinds: &[MemoryKind]) -> Result<BuildReport, BuildError> {
        if kinds.is_empty() {
            return Err(BuildError::NoKinds);
        }
        let wanted: Vec<MemoryKind> = MemoryKind::ALL
            .into_iter()
            .filter(|k| kinds.contains(k))
            .collect();
        let mut units = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut unparsed_lines = 0;
        let mut kind_counts = Vec::new();
        for kind in wanted {
            let mut count = 0;
            for doc in corpus.documents() {
                let wrap = |e: BuildError| BuildError::Doc {
                    doc_id: doc.doc_id.clone(),
                    source: Box::new(e),
                };
                let produced = match kind {
                    MemoryKind::Chunk => self.chunk_document(doc).map_err(wrap)?,
                    MemoryKind::Triple => {
                        let (u, skipped) = self.extract_triples(doc).map_err(wrap)?;
                        unparsed_lines += skipped;
                        u
                    }
                    MemoryKind::AtomicFact => {
                        let (u, skipped) = self.extract_atomic_facts(doc).map_err(wrap)?;
                        unparsed_lines += skipped;
                        u
                    }
                    MemoryKind::Summary => vec![self.summarize(doc).map_err(wrap)?],
                };
                for unit in produced {
                    if seen.insert(unit.mem_id().to_string()) {
                        units.push(unit);
                        count += 1;
                    }
                }
            }
            kind_counts.push((kind, count));
        }
        Ok(BuildReport {
            units,
            unparsed_lines,
            kind_counts,
        })
    }
}

fn sample(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.len() <= 160 {
        return trimmed.to_string();
    }
    let cut = trimmed
        .char_indices()
        .take_while(|(i, _)| *i < 160)
        .last()
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    format!("{}...", &trimmed[..cut])
}
