//! Exact cosine-similarity index over memory units. Vectors are
//! L2-normalized at insert so search is a dot product; results sort by
//! score descending with insertion order breaking ties. The index
//! persists as a JSONL file: one header line, then one record per unit.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{decode_f32s, encode_f32s, Gateway, GatewayError};
use crate::model::{render_text, Corpus, Document, MemoryUnit, ModelError};

pub const INDEX_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate mem_id {0:?} in index")]
    DuplicateMemId(String),
    #[error("vector for {mem_id:?} has dimension {got}, index expects {want}")]
    DimMismatch {
        mem_id: String,
        got: usize,
        want: usize,
    },
    #[error("vector for {0:?} has zero norm")]
    ZeroNorm(String),
    #[error("index file has schema version {got}, this build reads {want}")]
    SchemaVersion { got: u32, want: u32 },
    #[error("index header says {header} records, file has {actual}")]
    CountMismatch { header: usize, actual: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("memory cites doc_id {0:?} which is not in the corpus")]
    UnknownDocId(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One search hit: the unit, its cosine score, and its 1-based rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMemory {
    pub unit: MemoryUnit,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    dim: usize,
    corpus_ref: String,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRecord {
    unit: MemoryUnit,
    vector: String,
}

struct Entry {
    unit: MemoryUnit,
    vector: Vec<f32>,
}

pub struct MemoryIndex {
    dim: usize,
    corpus_ref: String,
    entries: Vec<Entry>,
    by_mem_id: HashMap<String, usize>,
}

fn normalize(mem_id: &str, values: &[f32], dim: usize) -> Result<Vec<f32>, StoreError> {
    if values.len() != dim {
        return Err(StoreError::DimMismatch {
            mem_id: mem_id.to_string(),
            got: values.len(),
            want: dim,
        });
    }
    let norm = values
        .iter()
        .map(|v| (*v as f64) * (*v as f64))
        .sum::<f64>()
        .sqrt();
    if norm < 1e-12 {
        return Err(StoreError::ZeroNorm(mem_id.to_string()));
    }
    Ok(values.iter().map(|v| ((*v as f64) / norm) as f32).collect())
}

impl MemoryIndex {
    pub fn empty(dim: usize, corpus_ref: impl Into<String>) -> Self {
        Self {
            dim,
            corpus_ref: corpus_ref.into(),
            entries: Vec::new(),
            by_mem_id: HashMap::new(),
        }
    }

    /// Embeds every unit's rendered text through the gateway and indexes
    /// it. Insertion order is the order of `units`.
    pub fn build(
        units: Vec<MemoryUnit>,
        gateway: &Gateway,
        corpus_ref: impl Into<String>,
    ) -> Result<Self, StoreError> {
        let mut index = Self::empty(gateway.embed_dim(), corpus_ref);
        if units.is_empty() {
            return Ok(index);
        }
        let texts: Vec<String> = units.iter().map(render_text).collect();
        let vectors = gateway.embed(&texts)?;
        for (unit, vector) in units.into_iter().zip(vectors) {
            index.insert(unit, vector.values())?;
        }
        Ok(index)
    }

    pub fn insert(&mut self, unit: MemoryUnit, values: &[f32]) -> Result<(), StoreError> {
        if self.by_mem_id.contains_key(unit.mem_id()) {
            return Err(StoreError::DuplicateMemId(unit.mem_id().to_string()));
        }
        let vector = normalize(unit.mem_id(), values, self.dim)?;
        self.by_mem_id
            .insert(unit.mem_id().to_string(), self.entries.len());
        self.entries.push(Entry { unit, vector });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn corpus_ref(&self) -> &str {
        &self.corpus_ref
    }

    pub fn get(&self, mem_id: &str) -> Option<&MemoryUnit> {
        self.by_mem_id.get(mem_id).map(|&i| &self.entries[i].unit)
    }

    pub fn units(&self) -> impl Iterator<Item = &MemoryUnit> {
        self.entries.iter().map(|e| &e.unit)
    }

    /// Exact top-k by cosine similarity. The query is normalized here;
    /// ties keep insertion order; `k` larger than the index returns
    /// everything.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<ScoredMemory>, StoreError> {
        let query = normalize("<query>", query, self.dim)?;
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let dot: f64 = entry
                    .vector
                    .iter()
                    .zip(&query)
                    .map(|(a, b)| (*a as f64) * (*b as f64))
                    .sum();
                (i, dot.clamp(-1.0, 1.0))
            })
            .collect();
        scored.sort_by(|(ia, sa), (ib, sb)| {
            sb.partial_cmp(sa)
                .expect("scores are finite")
                .then(ia.cmp(ib))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank0, (i, score))| ScoredMemory {
                unit: self.entries[i].unit.clone(),
                score,
                rank: rank0 + 1,
            })
            .collect())
    }

    /// Embeds the query text and searches.
    pub fn search_text(
        &self,
        query: &str,
        gateway: &Gateway,
        k: usize,
    ) -> Result<Vec<ScoredMemory>, StoreError> {
        let vectors = gateway.embed(std::slice::from_ref(&query.to_string()))?;
        self.search(vectors[0].values(), k)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = IndexHeader {
            version: INDEX_SCHEMA_VERSION,
            dim: self.dim,
            corpus_ref: self.corpus_ref.clone(),
            count: self.entries.len(),
        };
        serde_json::to_writer(&mut file, &header).map_err(io_err)?;
        file.write_all(b"\n")?;
        for entry in &self.entries {
            let record = IndexRecord {
                unit: entry.unit.clone(),
                vector: encode_f32s(&entry.vector),
            };
            serde_json::to_writer(&mut file, &record).map_err(io_err)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let file = std::fs::File::open(path.as_ref())?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines.next().ok_or(StoreError::Malformed {
            line: 1,
            message: "empty index file".into(),
        })??;
        let header: IndexHeader =
            serde_json::from_str(&header_line).map_err(|e| StoreError::Malformed {
                line: 1,
                message: format!("bad header: {e}"),
            })?;
        if header.version != INDEX_SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion {
                got: header.version,
                want: INDEX_SCHEMA_VERSION,
            });
        }
        let mut index = Self::empty(header.dim, header.corpus_ref.clone());
        for (offset, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: IndexRecord =
                serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
                    line: offset + 2,
                    message: e.to_string(),
                })?;
            let values = decode_f32s(&record.vector).ok_or(StoreError::Malformed {
                line: offset + 2,
                message: "vector is not base64-encoded f32 data".into(),
            })?;
            index.insert(record.unit, &values)?;
        }
        if index.entries.len() != header.count {
            return Err(StoreError::CountMismatch {
                header: header.count,
                actual: index.entries.len(),
            });
        }
        Ok(index)
    }
}

/// Source documents for the given hits, ordered by first citation: walk
/// hits in rank order, emit each cited document the first time it
/// appears. Every cited doc_id must exist in the corpus.
pub fn resolve_documents<'c>(
    hits: &[ScoredMemory],
    corpus: &'c Corpus,
) -> Result<Vec<&'c Document>, StoreError> {
    let mut seen = std::collections::HashSet::new();
    let mut docs = Vec::new();
    for hit in hits {
        for doc_id in hit.unit.source_doc_ids() {
            if seen.insert(doc_id.clone()) {
                let doc = corpus
                    .get(doc_id)
                    .ok_or_else(|| StoreError::UnknownDocId(doc_id.clone()))?;
                docs.push(doc);
            }
        }
    }
    Ok(docs)
}

fn io_err(e: serde_json::Error) -> StoreError {
    StoreError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MemoryPayload;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(text: &str, doc: &str) -> MemoryUnit {
        MemoryUnit::new(
            MemoryPayload::AtomicFact(text.to_string()),
            vec![doc.to_string()],
        )
        .unwrap()
    }

    fn filled_index(n: usize, dim: usize, seed: u64) -> (MemoryIndex, Vec<Vec<f32>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut index = MemoryIndex::empty(dim, "test");
        let mut raw = Vec::new();
        for i in 0..n {
            let values: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            index
                .insert(unit(&format!("fact {i}"), "d0"), &values)
                .unwrap();
            raw.push(values);
        }
        (index, raw)
    }

    #[test]
    fn search_matches_a_brute_force_oracle() {
        let dim = 24;
        let (index, raw) = filled_index(60, dim, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for _ in 0..20 {
            let query: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let got = index.search(&query, 10).unwrap();

            let norm = |v: &[f32]| {
                let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                v.iter()
                    .map(|x| (*x as f64 / n) as f32)
                    .collect::<Vec<f32>>()
            };
            let nq = norm(&query);
            let mut expected: Vec<(usize, f64)> = raw
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let nv = norm(v);
                    let dot: f64 = nv
                        .iter()
                        .zip(&nq)
                        .map(|(a, b)| (*a as f64) * (*b as f64))
                        .sum();
                    (i, dot.clamp(-1.0, 1.0))
                })
                .collect();
            expected.sort_by(|(ia, sa), (ib, sb)| sb.partial_cmp(sa).unwrap().then(ia.cmp(ib)));

            assert_eq!(got.len(), 10);
            for (hit, (i, score)) in got.iter().zip(&expected) {
                assert_eq!(hit.unit.mem_id(), index.entries[*i].unit.mem_id());
                assert_eq!(hit.score.to_bits(), score.to_bits());
            }
        }
    }

    #[test]
    fn scores_are_non_increasing_and_ranks_dense() {
        let (index, _) = filled_index(30, 8, 3);
        let query = vec![0.5f32; 8];
        let hits = index.search(&query, 30).unwrap();
        for pair in hits.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
        for (i, hit) in hits.iter().enumerate() {
            assert_eq!(hit.rank, i + 1);
            assert!((-1.0..=1.0).contains(&hit.score));
        }
    }

    #[test]
    fn ties_keep_insertion_order() {
        let mut index = MemoryIndex::empty(4, "test");
        let same = [1.0f32, 0.0, 0.0, 0.0];
        index.insert(unit("first", "d0"), &same).unwrap();
        index.insert(unit("second", "d0"), &same).unwrap();
        index.insert(unit("third", "d0"), &same).unwrap();
        let hits = index.search(&same, 3).unwrap();
        let texts: Vec<String> = hits.iter().map(|h| render_text(&h.unit)).collect();
        assert_eq!(texts, vec!["first", "second", "third"]);
    }

    #[test]
    fn k_beyond_len_returns_everything_and_empty_index_nothing() {
        let (index, _) = filled_index(5, 8, 11);
        assert_eq!(index.search(&[1.0; 8], 50).unwrap().len(), 5);
        let empty = MemoryIndex::empty(8, "test");
        assert!(empty.search(&[1.0; 8], 10).unwrap().is_empty());
    }

    #[test]
    fn duplicate_and_mismatched_inserts_are_rejected() {
        let mut index = MemoryIndex::empty(4, "test");
        let u = unit("a", "d0");
        index.insert(u.clone(), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            index.insert(u.clone(), &[1.0, 0.0, 0.0, 0.0]),
            Err(StoreError::DuplicateMemId(_))
        ));
        assert!(matches!(
            index.insert(unit("b", "d0"), &[1.0, 0.0]),
            Err(StoreError::DimMismatch { .. })
        ));
        assert!(matches!(
            index.insert(unit("c", "d0"), &[0.0; 4]),
            Err(StoreError::ZeroNorm(_))
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_search_results() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.jsonl");
        let (index, _) = filled_index(25, 12, 99);
        index.save(&path).unwrap();
        let loaded = MemoryIndex::load(&path).unwrap();
        assert_eq!(loaded.len(), index.len());
        assert_eq!(loaded.dim(), 12);
        assert_eq!(loaded.corpus_ref(), "test");
        let query = vec![0.3f32; 12];
        let a = index.search(&query, 25).unwrap();
        let b = loaded.search(&query, 25).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.unit, y.unit);
            assert_eq!(x.score.to_bits(), y.score.to_bits(), "scores drifted");
        }
    }

    #[test]
    fn load_rejects_other_schema_versions_and_bad_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.jsonl");
        let (index, _) = filled_index(3, 4, 5);
        index.save(&path).unwrap();

        let contents = std::fs::read_to_string(&path).unwrap();
        let bumped = contents.replacen("\"version\":1", "\"version\":2", 1);
        std::fs::write(&path, &bumped).unwrap();
        assert!(matches!(
            MemoryIndex::load(&path),
            Err(StoreError::SchemaVersion { got: 2, want: 1 })
        ));

        let mut lines: Vec<&str> = contents.lines().collect();
        lines.pop();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            MemoryIndex::load(&path),
            Err(StoreError::CountMismatch {
                header: 3,
                actual: 2
            })
        ));
    }

    #[test]
    fn resolve_documents_orders_by_first_citation() {
        let corpus = Corpus::new(
            "q",
            vec![
                Document::new("d0", "zero", "original").unwrap(),
                Document::new("d1", "one", "original").unwrap(),
                Document::new("d2", "two", "original").unwrap(),
            ],
        )
        .unwrap();
        let hit = |text: &str, docs: &[&str], rank: usize| ScoredMemory {
            unit: MemoryUnit::new(
                MemoryPayload::AtomicFact(text.into()),
                docs.iter().map(|d| d.to_string()).collect(),
            )
            .unwrap(),
            score: 1.0 - rank as f64 * 0.1,
            rank,
        };
        let hits = vec![
            hit("a", &["d2"], 1),
            hit("b", &["d0", "d2"], 2),
            hit("c", &["d0"], 3),
        ];
        let docs = resolve_documents(&hits, &corpus).unwrap();
        let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["d2", "d0"]);

        let bad = vec![hit("x", &["missing"], 1)];
        assert!(matches!(
            resolve_documents(&bad, &corpus),
            Err(StoreError::UnknownDocId(_))
        ));
    }

    #[test]
    fn build_embeds_rendered_units_through_the_gateway() {
        let gw = crate::gateway::Gateway::scripted(vec![], 16);
        let units = vec![
            unit("Paris is in France", "d0"),
            unit("The sky is blue", "d0"),
        ];
        let index = MemoryIndex::build(units.clone(), &gw, "q0").unwrap();
        assert_eq!(index.len(), 2);
        let hits = index
            .search_text("which city is in France", &gw, 2)
            .unwrap();
        assert_eq!(hits[0].unit.mem_id(), units[0].mem_id());
        let empty = MemoryIndex::build(vec![], &gw, "q0").unwrap();
        assert!(empty.is_empty());
    }
}
