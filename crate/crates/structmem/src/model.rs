//! Core domain types shared by every stage of the pipeline: documents,
//! memory units, and the retrieval hyperparameters.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Separator used inside rendered knowledge triples. Forbidden inside
/// triple parts so the rendering stays unambiguous.
pub const TRIPLE_SEPARATOR: char = ';';

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("document {0:?} has empty text")]
    EmptyDocumentText(String),
    #[error("duplicate doc_id {0:?} in corpus")]
    DuplicateDocId(String),
    #[error("triple part {0:?} is empty after trimming")]
    EmptyTriplePart(&'static str),
    #[error("triple part {part:?} contains the separator {TRIPLE_SEPARATOR:?}: {value:?}")]
    SeparatorInTriplePart { part: &'static str, value: String },
    #[error("memory unit must cite at least one source document")]
    NoSourceDocs,
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("rerank keep count r={r} exceeds candidate pool k={k}")]
    RerankExceedsPool { r: usize, k: usize },
    #[error("stored mem_id {found:?} does not match recomputed {expected:?}")]
    MemIdMismatch { expected: String, found: String },
}

/// One raw source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    /// Free-form origin label, e.g. "original" or "noise".
    pub source_tag: String,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        source_tag: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let doc_id = doc_id.into();
        let text = text.into();
        if text.is_empty() {
            return Err(ModelError::EmptyDocumentText(doc_id));
        }
        Ok(Self {
            doc_id,
            text,
            source_tag: source_tag.into(),
        })
    }
}

/// The per-question document set. Order is stable and preserved across
/// save/load; doc_ids are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub question_id: String,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(
        question_id: impl Into<String>,
        documents: Vec<Document>,
    ) -> Result<Self, ModelError> {
        let mut seen = std::collections::HashSet::new();
        for d in &documents {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(ModelError::DuplicateDocId(d.doc_id.clone()));
            }
        }
        Ok(Self {
            question_id: question_id.into(),
            documents,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.get(doc_id).is_some()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Appends a document, preserving existing order. Fails on a duplicate id.
    pub fn push(&mut self, doc: Document) -> Result<(), ModelError> {
        if self.contains(&doc.doc_id) {
            return Err(ModelError::DuplicateDocId(doc.doc_id));
        }
        self.documents.push(doc);
        Ok(())
    }
}

/// A head / relation / tail statement. All parts are trimmed at
/// construction and may not contain the `;` separator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl KnowledgeTriple {
    pub fn new(
        head: impl AsRef<str>,
        relation: impl AsRef<str>,
        tail: impl AsRef<str>,
    ) -> Result<Self, ModelError> {
        let part = |name: &'static str, raw: &str| -> Result<String, ModelError> {
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                return Err(ModelError::EmptyTriplePart(name));
            }
            if trimmed.contains(TRIPLE_SEPARATOR) {
                return Err(ModelError::SeparatorInTriplePart {
                    part: name,
                    value: trimmed.to_string(),
                });
            }
            Ok(trimmed.to_string())
        };
        Ok(Self {
            head: part("head", head.as_ref())?,
            relation: part("relation", relation.as_ref())?,
            tail: part("tail", tail.as_ref())?,
        })
    }
}

/// The four structural memory forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Chunk,
    Triple,
    AtomicFact,
    Summary,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 4] = [
        MemoryKind::Chunk,
        MemoryKind::Triple,
        MemoryKind::AtomicFact,
        MemoryKind::Summary,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MemoryKind::Chunk => "chunk",
            MemoryKind::Triple => "triple",
            MemoryKind::AtomicFact => "atomic_fact",
            MemoryKind::Summary => "summary",
        }
    }

    pub fn from_label(label: &str) -> Option<MemoryKind> {
        MemoryKind::ALL.into_iter().find(|k| k.label() == label)
    }
}

/// Payload of one memory unit. The variant *is* the memory kind, so a
/// kind/payload mismatch cannot be constructed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MemoryPayload {
    Chunk(String),
    Triple(KnowledgeTriple),
    AtomicFact(String),
    Summary(String),
}

impl MemoryPayload {
    pub fn kind(&self) -> MemoryKind {
        match self {
            MemoryPayload::Chunk(_) => MemoryKind::Chunk,
            MemoryPayload::Triple(_) => MemoryKind::Triple,
            MemoryPayload::AtomicFact(_) => MemoryKind::AtomicFact,
            MemoryPayload::Summary(_) => MemoryKind::Summary,
        }
    }
}

/// One structural memory item, linked back to its source documents.
///
/// `mem_id` is a content hash of (kind, rendered text, sorted source doc
/// ids), so re-ingesting the same content yields the same id.
/// Deserialization recomputes the hash and rejects records whose stored
/// id does not match their content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "UnitShadow", into = "UnitShadow")]
pub struct MemoryUnit {
    mem_id: String,
    payload: MemoryPayload,
    source_doc_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct UnitShadow {
    mem_id: String,
    #[serde(flatten)]
    payload: MemoryPayload,
    source_doc_ids: Vec<String>,
}

impl From<MemoryUnit> for UnitShadow {
    fn from(unit: MemoryUnit) -> Self {
        Self {
            mem_id: unit.mem_id,
            payload: unit.payload,
            source_doc_ids: unit.source_doc_ids,
        }
    }
}

impl TryFrom<UnitShadow> for MemoryUnit {
    type Error = ModelError;

    fn try_from(shadow: UnitShadow) -> Result<Self, ModelError> {
        let unit = MemoryUnit::new(shadow.payload, shadow.source_doc_ids)?;
        if unit.mem_id != shadow.mem_id {
            return Err(ModelError::MemIdMismatch {
                expected: unit.mem_id,
                found: shadow.mem_id,
            });
        }
        Ok(unit)
    }
}

impl MemoryUnit {
    pub fn new(payload: MemoryPayload, source_doc_ids: Vec<String>) -> Result<Self, ModelError> {
        if source_doc_ids.is_empty() {
            return Err(ModelError::NoSourceDocs);
        }
        let mem_id = compute_mem_id(&payload, &source_doc_ids);
        Ok(Self {
            mem_id,
            payload,
            source_doc_ids,
        })
    }

    pub fn mem_id(&self) -> &str {
        &self.mem_id
    }

    pub fn kind(&self) -> MemoryKind {
        self.payload.kind()
    }

    pub fn payload(&self) -> &MemoryPayload {
        &self.payload
    }

    pub fn source_doc_ids(&self) -> &[String] {
        &self.source_doc_ids
    }
}

fn compute_mem_id(payload: &MemoryPayload, source_doc_ids: &[String]) -> String {
    let mut sorted: Vec<&str> = source_doc_ids.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    hasher.update(payload.kind().label().as_bytes());
    hasher.update([0x1f]);
    hasher.update(render_payload(payload).as_bytes());
    for id in sorted {
        hasher.update([0x1e]);
        hasher.update(id.as_bytes());
    }
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Canonical text form of a memory unit, used both as embedding input and
/// as prompt context. Plain-text kinds render verbatim; triples render as
/// `(head; relation; tail)`.
pub fn render_text(unit: &MemoryUnit) -> String {
    render_payload(unit.payload())
}

fn render_payload(payload: &MemoryPayload) -> String {
    match payload {
        MemoryPayload::Chunk(t) | MemoryPayload::AtomicFact(t) | MemoryPayload::Summary(t) => {
            t.clone()
        }
        MemoryPayload::Triple(t) => format!("({}; {}; {})", t.head, t.relation, t.tail),
    }
}

/// Strategy selector for memory retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStrategy {
    SingleStep,
    Rerank,
    Iterative,
}

impl RetrievalStrategy {
    pub fn label(self) -> &'static str {
        match self {
            RetrievalStrategy::SingleStep => "single_step",
            RetrievalStrategy::Rerank => "rerank",
            RetrievalStrategy::Iterative => "iterative",
        }
    }
}

/// Retrieval hyperparameters: final count K, rerank keep R, per-iteration
/// count T, iteration count N, and the chunk token limit L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub strategy: RetrievalStrategy,
    pub k_final: usize,
    pub r_rerank: usize,
    pub t_per_iter: usize,
    pub n_iters: usize,
    pub l_chunk_tokens: usize,
}

impl RetrievalConfig {
    pub fn new(
        strategy: RetrievalStrategy,
        k_final: usize,
        r_rerank: usize,
        t_per_iter: usize,
        n_iters: usize,
        l_chunk_tokens: usize,
    ) -> Result<Self, ModelError> {
        if k_final == 0 {
            return Err(ModelError::ZeroCount("k_final"));
        }
        if r_rerank == 0 {
            return Err(ModelError::ZeroCount("r_rerank"));
        }
        if t_per_iter == 0 {
            return Err(ModelError::ZeroCount("t_per_iter"));
        }
        if l_chunk_tokens == 0 {
            return Err(ModelError::ZeroCount("l_chunk_tokens"));
        }
        if strategy == RetrievalStrategy::Rerank && r_rerank > k_final {
            return Err(ModelError::RerankExceedsPool {
                r: r_rerank,
                k: k_final,
            });
        }
        Ok(Self {
            strategy,
            k_final,
            r_rerank,
            t_per_iter,
            n_iters,
            l_chunk_tokens,
        })
    }
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            strategy: RetrievalStrategy::SingleStep,
            k_final: 100,
            r_rerank: 10,
            t_per_iter: 50,
            n_iters: 3,
            l_chunk_tokens: 1024,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(payload: MemoryPayload) -> MemoryUnit {
        MemoryUnit::new(payload, vec!["d1".into()]).unwrap()
    }

    #[test]
    fn triple_renders_in_box_notation() {
        let t = KnowledgeTriple::new("Moneybomb", "type", "neologism").unwrap();
        let u = unit(MemoryPayload::Triple(t));
        assert_eq!(render_text(&u), "(Moneybomb; type; neologism)");
    }

    #[test]
    fn chunk_renders_verbatim() {
        let u = unit(MemoryPayload::Chunk("abc".into()));
        assert_eq!(render_text(&u), "abc");
    }

    #[test]
    fn triple_parts_trimmed_at_construction() {
        let t = KnowledgeTriple::new(" A ", "r", "b").unwrap();
        let u = unit(MemoryPayload::Triple(t));
        assert_eq!(render_text(&u), "(A; r; b)");
    }

    #[test]
    fn triple_rejects_separator_in_part() {
        let err = KnowledgeTriple::new("a;b", "r", "t").unwrap_err();
        assert!(matches!(err, ModelError::SeparatorInTriplePart { .. }));
    }

    #[test]
    fn triple_rejects_empty_part() {
        let err = KnowledgeTriple::new("a", "  ", "t").unwrap_err();
        assert_eq!(err, ModelError::EmptyTriplePart("relation"));
    }

    #[test]
    fn render_is_stable() {
        let t = KnowledgeTriple::new("Moneybomb", "coined in", "2007").unwrap();
        let u = unit(MemoryPayload::Triple(t));
        assert_eq!(render_text(&u), render_text(&u));
    }

    #[test]
    fn mem_id_ignores_source_order() {
        let p = MemoryPayload::AtomicFact("f".into());
        let a = MemoryUnit::new(p.clone(), vec!["d1".into(), "d2".into()]).unwrap();
        let b = MemoryUnit::new(p, vec!["d2".into(), "d1".into()]).unwrap();
        assert_eq!(a.mem_id(), b.mem_id());
    }

    #[test]
    fn mem_id_distinguishes_kinds() {
        let a = unit(MemoryPayload::Chunk("same text".into()));
        let b = unit(MemoryPayload::Summary("same text".into()));
        assert_ne!(a.mem_id(), b.mem_id());
    }

    #[test]
    fn corpus_rejects_duplicate_doc_ids() {
        let d1 = Document::new("d", "x", "original").unwrap();
        let d2 = Document::new("d", "y", "original").unwrap();
        let err = Corpus::new("q", vec![d1, d2]).unwrap_err();
        assert_eq!(err, ModelError::DuplicateDocId("d".into()));
    }

    #[test]
    fn document_rejects_empty_text() {
        assert!(Document::new("d", "", "original").is_err());
    }

    #[test]
    fn rerank_config_requires_r_within_pool() {
        let err = RetrievalConfig::new(RetrievalStrategy::Rerank, 4, 5, 10, 1, 16).unwrap_err();
        assert_eq!(err, ModelError::RerankExceedsPool { r: 5, k: 4 });
        assert!(RetrievalConfig::new(RetrievalStrategy::Rerank, 4, 4, 10, 1, 16).is_ok());
    }

    #[test]
    fn unit_serde_round_trips_and_verifies_the_id() {
        let unit = MemoryUnit::new(
            MemoryPayload::Triple(KnowledgeTriple::new("Moneybomb", "coined in", "2007").unwrap()),
            vec!["d1".into()],
        )
        .unwrap();
        let json = serde_json::to_string(&unit).unwrap();
        assert!(json.contains("\"kind\":\"triple\""));
        let back: MemoryUnit = serde_json::from_str(&json).unwrap();
        assert_eq!(back, unit);

        let tampered = json.replace("2007", "2008");
        let err = serde_json::from_str::<MemoryUnit>(&tampered).unwrap_err();
        assert!(err.to_string().contains("mem_id"), "got: {err}");
    }

    #[test]
    fn kind_labels_round_trip() {
        for kind in MemoryKind::ALL {
            assert_eq!(MemoryKind::from_label(kind.label()), Some(kind));
        }
        assert_eq!(MemoryKind::from_label("bogus"), None);
    }
}
