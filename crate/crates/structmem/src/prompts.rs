//! Prompt templates for every model-facing step. Built-in defaults are
//! compiled in; a directory of same-named .txt files overrides them per
//! slot. Leading `#` comment lines in a template are stripped.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("failed to read {file}: {source}")]
    Io {
        file: String,
        source: std::io::Error,
    },
    #[error("template {file} is missing the {placeholder} placeholder")]
    MissingPlaceholder {
        file: &'static str,
        placeholder: &'static str,
    },
    #[error("template {file} is empty")]
    EmptyTemplate { file: &'static str },
}

pub const SYSTEM_MEMORY: &str =
    "You convert documents into structured memory records and follow the output format exactly.";
pub const SYSTEM_RETRIEVAL: &str =
    "You assist a retrieval system and follow the output format exactly.";
pub const SYSTEM_ANSWER: &str =
    "You answer questions using only the provided context and follow the output format exactly.";

pub(crate) const MARKER_TRIPLES: &str = "Extract knowledge triples";
pub(crate) const MARKER_FACTS: &str = "self-contained atomic facts";
pub(crate) const MARKER_SUMMARY: &str = "Write a concise summary";
pub(crate) const MARKER_RERANK: &str = "Rank the numbered memories";
pub(crate) const MARKER_REFINE: &str = "Refine the search query";
pub(crate) const MARKER_ANSWER_QA: &str = "answer the question with a short phrase";
pub(crate) const MARKER_ANSWER_MC: &str = "Reply with the letter";

const SLOTS: [(&str, &[&str]); 7] = [
    ("triples.txt", &["{document}"]),
    ("atomic_facts.txt", &["{document}"]),
    ("summary.txt", &["{document}"]),
    ("rerank.txt", &["{question}", "{keep}", "{memories}"]),
    ("refine.txt", &["{question}", "{query}", "{memories}"]),
    ("answer_qa.txt", &["{context}", "{question}"]),
    ("answer_mc.txt", &["{context}", "{question}", "{choices}"]),
];

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: [String; 7],
}

fn strip_leading_comments(raw: &str) -> String {
    let mut lines = raw.lines().peekable();
    while matches!(lines.peek(), Some(l) if l.starts_with('#')) {
        lines.next();
    }
    let body: Vec<&str> = lines.collect();
    body.join("\n").trim().to_string()
}

fn validate(slot: usize, body: &str) -> Result<(), PromptError> {
    let (file, placeholders) = SLOTS[slot];
    if body.is_empty() {
        return Err(PromptError::EmptyTemplate { file });
    }
    for ph in placeholders {
        if !body.contains(ph) {
            return Err(PromptError::MissingPlaceholder {
                file,
                placeholder: ph,
            });
        }
    }
    Ok(())
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let raw = [
            include_str!("../prompts/triples.txt"),
            include_str!("../prompts/atomic_facts.txt"),
            include_str!("../prompts/summary.txt"),
            include_str!("../prompts/rerank.txt"),
            include_str!("../prompts/refine.txt"),
            include_str!("../prompts/answer_qa.txt"),
            include_str!("../prompts/answer_mc.txt"),
        ];
        let templates = raw.map(strip_leading_comments);
        for (i, body) in templates.iter().enumerate() {
            validate(i, body).expect("built-in templates are valid");
        }
        Self { templates }
    }

    /// SHA-256 of each template body, keyed by slot file name. Run
    /// manifests record these so results can be traced to the exact
    /// prompt wording.
    pub fn content_hashes(&self) -> Vec<(&'static str, String)> {
        use sha2::{Digest, Sha256};
        SLOTS
            .iter()
            .zip(&self.templates)
            .map(|((file, _), body)| {
                let mut hasher = Sha256::new();
                hasher.update(body.as_bytes());
                let hex: String = hasher
                    .finalize()
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect();
                (*file, hex)
            })
            .collect()
    }

    /// Builtin templates with any same-named files in `dir` overriding
    /// their slot.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        for (i, (file, _)) in SLOTS.iter().enumerate() {
            let path = dir.join(file);
            if path.exists() {
                let raw = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    file: path.display().to_string(),
                    source,
                })?;
                let body = strip_leading_comments(&raw);
                validate(i, &body)?;
                set.templates[i] = body;
            }
        }
        Ok(set)
    }

    pub fn triples(&self, document: &str) -> (String, String) {
        (
            SYSTEM_MEMORY.to_string(),
            self.templates[0].replace("{document}", document),
        )
    }

    pub fn atomic_facts(&self, document: &str) -> (String, String) {
        (
            SYSTEM_MEMORY.to_string(),
            self.templates[1].replace("{document}", document),
        )
    }

    pub fn summary(&self, document: &str) -> (String, String) {
        (
            SYSTEM_MEMORY.to_string(),
            self.templates[2].replace("{document}", document),
        )
    }

    pub fn rerank(&self, question: &str, memories: &str, keep: usize) -> (String, String) {
        (
            SYSTEM_RETRIEVAL.to_string(),
            self.templates[3]
                .replace("{question}", question)
                .replace("{keep}", &keep.to_string())
                .replace("{memories}", memories),
        )
    }

    pub fn refine(&self, question: &str, query: &str, memories: &str) -> (String, String) {
        (
            SYSTEM_RETRIEVAL.to_string(),
            self.templates[4]
                .replace("{question}", question)
                .replace("{query}", query)
                .replace("{memories}", memories),
        )
    }

    pub fn answer_qa(&self, context: &str, question: &str) -> (String, String) {
        (
            SYSTEM_ANSWER.to_string(),
            self.templates[5]
                .replace("{context}", context)
                .replace("{question}", question),
        )
    }

    pub fn answer_mc(&self, context: &str, question: &str, choices: &str) -> (String, String) {
        (
            SYSTEM_ANSWER.to_string(),
            self.templates[6]
                .replace("{context}", context)
                .replace("{question}", question)
                .replace("{choices}", choices),
        )
    }
}
