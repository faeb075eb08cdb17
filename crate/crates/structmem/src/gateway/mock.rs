//! Offline providers: a scripted provider for tests, a demo provider
//! that derives plausible responses from the prompt itself, and a
//! hash-based embedder. All of them are fully deterministic.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError, Provider};
use crate::prompts::{
    MARKER_ANSWER_MC, MARKER_ANSWER_QA, MARKER_FACTS, MARKER_REFINE, MARKER_RERANK, MARKER_SUMMARY,
    MARKER_TRIPLES,
};
use crate::token::{token_strings, WordPunctCounter};

/// Embeds text as the normalized sum of per-token pseudo-random unit
/// directions, so token overlap produces cosine similarity. Identical
/// text always embeds to the identical vector.
pub struct HashEmbedder {
    dim: usize,
    memo: Mutex<HashMap<String, Vec<f32>>>,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token_direction(&self, token: &str) -> Vec<f32> {
        if let Some(hit) = self.memo.lock().unwrap().get(token) {
            return hit.clone();
        }
        let mut hasher = Sha256::new();
        hasher.update(b"tok");
        hasher.update([0x1f]);
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        self.memo
            .lock()
            .unwrap()
            .insert(token.to_string(), values.clone());
        values
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let counter = WordPunctCounter;
        let mut tokens: Vec<String> = token_strings(&counter, text)
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect();
        if tokens.is_empty() {
            tokens.push(format!("\u{1f}raw:{text}"));
        }
        let mut sum = vec![0.0f32; self.dim];
        for token in &tokens {
            for (acc, v) in sum.iter_mut().zip(self.token_direction(token)) {
                *acc += v;
            }
        }
        let norm = sum
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt();
        if norm < 1e-9 {
            return self.token_direction(&format!("\u{1f}fallback:{text}"));
        }
        sum.iter().map(|v| (*v as f64 / norm) as f32).collect()
    }

    pub fn embed_all(&self, texts: &[String]) -> Vec<Vec<f32>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// How a scripted rule decides whether it answers a request.
#[derive(Debug, Clone)]
pub enum Matcher {
    /// The user prompt equals this string exactly.
    Exact(String),
    /// The combined "system\nuser" text contains this substring.
    Substring(String),
}

impl Matcher {
    fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Exact(key) => request.user_prompt == *key,
            Matcher::Substring(needle) => {
                let combined = format!("{}\n{}", request.system_prompt, request.user_prompt);
                combined.contains(needle.as_str())
            }
        }
    }
}

/// Replays scripted responses; the first matching rule wins and an
/// unmatched request is a hard error so tests fail loudly.
pub struct ScriptedProvider {
    rules: Vec<(Matcher, String)>,
    embedder: HashEmbedder,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<(Matcher, String)>, embed_dim: usize) -> Self {
        Self {
            rules,
            embedder: HashEmbedder::new(embed_dim),
        }
    }
}

impl Provider for ScriptedProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        for (matcher, response) in &self.rules {
            if matcher.matches(request) {
                return Ok(response.clone());
            }
        }
        let mut prompt = request.user_prompt.clone();
        if prompt.len() > 300 {
            let cut = prompt
                .char_indices()
                .take_while(|(i, _)| *i < 300)
                .last()
                .map(|(i, c)| i + c.len_utf8())
                .unwrap_or(0);
            prompt.truncate(cut);
            prompt.push_str("...");
        }
        Err(GatewayError::Unscripted { prompt })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(self.embedder.embed_all(texts))
    }

    fn model_name(&self) -> &str {
        "scripted-chat"
    }

    fn embed_model_name(&self) -> &str {
        "hash-embed"
    }
}

/// Derives responses from the prompt content alone: triples and facts
/// from document sentences, identity rerank orders, echoed refinement
/// queries, and first-sentence answers. Lets the full pipeline run
/// end to end with no network and no script.
pub struct DemoProvider {
    embedder: HashEmbedder,
}

impl DemoProvider {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            embedder: HashEmbedder::new(embed_dim),
        }
    }
}

fn section_after<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    text.find(header).map(|at| &text[at + header.len()..])
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if matches!(ch, '.' | '!' | '?') {
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            current.clear();
        } else {
            current.push(ch);
        }
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

fn words(text: &str) -> Vec<String> {
    let counter = WordPunctCounter;
    token_strings(&counter, text)
        .into_iter()
        .filter(|t| t.chars().any(|c| c.is_alphanumeric()))
        .collect()
}

impl DemoProvider {
    fn derive(&self, request: &ChatRequest) -> String {
        let user = request.user_prompt.as_str();
        if user.contains(MARKER_TRIPLES) {
            let doc = section_after(user, "Document:\n").unwrap_or(user);
            let mut lines = Vec::new();
            for sentence in split_sentences(doc).into_iter().take(3) {
                let ws = words(&sentence);
                if ws.len() < 2 {
                    continue;
                }
                let head = ws[..ws.len().min(2)].join(" ");
                let tail = ws[ws.len().saturating_sub(2)..].join(" ");
                lines.push(format!("({head}; relates to; {tail})"));
            }
            if lines.is_empty() {
                lines.push("(document; has; content)".to_string());
            }
            lines.join("\n")
        } else if user.contains(MARKER_FACTS) {
            let doc = section_after(user, "Document:\n").unwrap_or(user);
            let sentences = split_sentences(doc);
            if sentences.is_empty() {
                "The document is empty.".to_string()
            } else {
                sentences
                    .into_iter()
                    .take(5)
                    .map(|s| format!("{s}."))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        } else if user.contains(MARKER_SUMMARY) {
            let doc = section_after(user, "Document:\n").unwrap_or(user);
            let sentences = split_sentences(doc);
            match sentences.len() {
                0 => "Empty document.".to_string(),
                1 => format!("{}.", sentences[0]),
                _ => format!("{}. {}.", sentences[0], sentences[1]),
            }
        } else if user.contains(MARKER_RERANK) {
            let n = user
                .lines()
                .filter(|l| {
                    let mut chars = l.chars();
                    chars.next().map(|c| c.is_ascii_digit()).unwrap_or(false) && l.contains(". ")
                })
                .count();
            (1..=n.max(1))
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        } else if user.contains(MARKER_REFINE) {
            user.lines()
                .find_map(|l| l.strip_prefix("Current query: "))
                .unwrap_or("same query")
                .to_string()
        } else if user.contains(MARKER_ANSWER_MC) {
            "A".to_string()
        } else if user.contains(MARKER_ANSWER_QA) {
            let context = section_after(user, "Context:\n").unwrap_or(user);
            let first = split_sentences(context).into_iter().next();
            match first {
                Some(sentence) => words(&sentence)
                    .into_iter()
                    .take(8)
                    .collect::<Vec<_>>()
                    .join(" "),
                None => "unknown".to_string(),
            }
        } else {
            words(user)
                .into_iter()
                .take(6)
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
}

impl Provider for DemoProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        Ok(self.derive(request))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(self.embedder.embed_all(texts))
    }

    fn model_name(&self) -> &str {
        "demo-chat"
    }

    fn embed_model_name(&self) -> &str {
        "hash-embed"
    }
}
