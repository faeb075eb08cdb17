//! Dataset loading and noise injection. Datasets are JSONL, one
//! question per line with its own document set; short-answer and
//! multiple-choice tasks share the schema. Noise injection pads each
//! question's corpus with documents sampled from other questions,
//! keeping the originals as an untouched prefix so a 0.0 ratio is the
//! identity.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Corpus, Document, ModelError};

pub const ORIGINAL_TAG: &str = "original";
pub const NOISE_TAG: &str = "noise";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {field} must not be empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: task {task:?} requires {field}")]
    MissingField {
        line: usize,
        task: &'static str,
        field: &'static str,
    },
    #[error("line {line}: gold_choice {got} out of range for {len} choices")]
    BadGoldChoice { line: usize, got: usize, len: usize },
    #[error("line {line}: {got} choices, need between 2 and 26")]
    BadChoiceCount { line: usize, got: usize },
    #[error("line {line}: duplicate question_id {id:?}")]
    DuplicateQuestionId { line: usize, id: String },
    #[error("line {line}: task {got:?} differs from the dataset's task {expected:?}")]
    MixedTasks {
        line: usize,
        expected: &'static str,
        got: &'static str,
    },
    #[error("line {line}: {source}")]
    Model { line: usize, source: ModelError },
    #[error("dataset {0:?} has no instances")]
    Empty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Qa,
    MultipleChoice,
}

impl TaskKind {
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Qa => "qa",
            TaskKind::MultipleChoice => "multiple_choice",
        }
    }
}

/// One question with its documents and gold labels.
#[derive(Debug, Clone)]
pub struct QaInstance {
    pub question_id: String,
    pub task: TaskKind,
    pub question: String,
    pub corpus: Corpus,
    pub gold_answers: Vec<String>,
    pub choices: Vec<String>,
    pub gold_choice: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    instances: Vec<QaInstance>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, instances: Vec<QaInstance>) -> Self {
        Self {
            name: name.into(),
            instances,
        }
    }

    pub fn instances(&self) -> &[QaInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn task(&self) -> TaskKind {
        self.instances[0].task
    }
}

#[derive(Deserialize)]
struct RawDoc {
    doc_id: String,
    text: String,
}

#[derive(Deserialize)]
struct RawLine {
    question_id: String,
    task: TaskKind,
    question: String,
    documents: Vec<RawDoc>,
    #[serde(default)]
    gold_answers: Vec<String>,
    #[serde(default)]
    choices: Vec<String>,
    #[serde(default)]
    gold_choice: Option<usize>,
}

/// Loads a JSONL dataset, validating every line. `limit` keeps only the
/// first instances. The dataset name is the file stem.
pub fn load_dataset(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let reader = BufReader::new(std::fs::File::open(path)?);

    let mut instances = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut dataset_task: Option<TaskKind> = None;

    for (offset, line) in reader.lines().enumerate() {
        if let Some(limit) = limit {
            if instances.len() >= limit {
                break;
            }
        }
        let line_no = offset + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            line: line_no,
            source,
        })?;

        if raw.question_id.trim().is_empty() {
            return Err(DatasetError::EmptyField {
                line: line_no,
                field: "question_id",
            });
        }
        if raw.question.trim().is_empty() {
            return Err(DatasetError::EmptyField {
                line: line_no,
                field: "question",
            });
        }
        if raw.documents.is_empty() {
            return Err(DatasetError::EmptyField {
                line: line_no,
                field: "documents",
            });
        }
        if !seen_ids.insert(raw.question_id.clone()) {
            return Err(DatasetError::DuplicateQuestionId {
                line: line_no,
                id: raw.question_id,
            });
        }
        match dataset_task {
            None => dataset_task = Some(raw.task),
            Some(expected) if expected != raw.task => {
                return Err(DatasetError::MixedTasks {
                    line: line_no,
                    expected: expected.label(),
                    got: raw.task.label(),
                });
            }
            _ => {}
        }

        match raw.task {
            TaskKind::Qa => {
                if raw.gold_answers.is_empty() {
                    return Err(DatasetError::MissingField {
                        line: line_no,
                        task: "qa",
                        field: "gold_answers",
                    });
                }
            }
            TaskKind::MultipleChoice => {
                if !(2..=26).contains(&raw.choices.len()) {
                    return Err(DatasetError::BadChoiceCount {
                        line: line_no,
                        got: raw.choices.len(),
                    });
                }
                match raw.gold_choice {
                    None => {
                        return Err(DatasetError::MissingField {
                            line: line_no,
                            task: "multiple_choice",
                            field: "gold_choice",
                        });
                    }
                    Some(got) if got >= raw.choices.len() => {
                        return Err(DatasetError::BadGoldChoice {
                            line: line_no,
                            got,
                            len: raw.choices.len(),
                        });
                    }
                    Some(_) => {}
                }
            }
        }

        let wrap = |source: ModelError| DatasetError::Model {
            line: line_no,
            source,
        };
        let mut docs = Vec::with_capacity(raw.documents.len());
        for raw_doc in raw.documents {
            docs.push(Document::new(raw_doc.doc_id, raw_doc.text, ORIGINAL_TAG).map_err(wrap)?);
        }
        let corpus = Corpus::new(raw.question_id.clone(), docs).map_err(wrap)?;

        instances.push(QaInstance {
            question_id: raw.question_id,
            task: raw.task,
            question: raw.question,
            corpus,
            gold_answers: raw.gold_answers,
            choices: raw.choices,
            gold_choice: raw.gold_choice,
        });
    }

    if instances.is_empty() {
        return Err(DatasetError::Empty(name));
    }
    Ok(Dataset::new(name, instances))
}

fn noise_rng(seed: u64, question_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(b"noise");
    hasher.update([0x1f]);
    hasher.update(question_id.as_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Pads each question's corpus with `n_noise` distractor documents drawn
/// without replacement from other questions' documents (clamped to the
/// available pool). Original documents stay first and untouched; injected
/// ones carry the "noise" tag. Selection is a pure function of
/// (seed, question_id), so runs never depend on iteration order.
pub fn inject_noise(dataset: &Dataset, n_noise: usize, seed: u64) -> Dataset {
    if n_noise == 0 {
        return dataset.clone();
    }

    let mut out = Vec::with_capacity(dataset.len());
    for instance in dataset.instances() {
        let own_ids: HashSet<&str> = instance
            .corpus
            .documents()
            .iter()
            .map(|d| d.doc_id.as_str())
            .collect();
        let mut pool: Vec<&Document> = Vec::new();
        let mut pool_ids: HashSet<&str> = HashSet::new();
        for other in dataset.instances() {
            if other.question_id == instance.question_id {
                continue;
            }
            for doc in other.corpus.documents() {
                if !own_ids.contains(doc.doc_id.as_str()) && pool_ids.insert(doc.doc_id.as_str()) {
                    pool.push(doc);
                }
            }
        }

        let take = n_noise.min(pool.len());
        let mut rng = noise_rng(seed, &instance.question_id);
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        for i in 0..take {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }

        let mut corpus = instance.corpus.clone();
        for &i in &indices[..take] {
            let noisy = Document::new(pool[i].doc_id.clone(), pool[i].text.clone(), NOISE_TAG)
                .expect("pool documents are valid");
            corpus.push(noisy).expect("pool ids were filtered");
        }
        out.push(QaInstance {
            corpus,
            ..instance.clone()
        });
    }
    Dataset::new(dataset.name.clone(), out)
}
