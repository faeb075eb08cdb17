//! Turns retrieved memories into an answer. Context is assembled
//! greedily in rank order under a token budget: items that fit are taken
//! whole, oversized chunks, summaries, and documents are tail-truncated
//! once and end the assembly, and oversized triples or facts are skipped
//! so later smaller items still get a chance. Answers come either from
//! the memories themselves or from the source documents they cite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{render_text, Corpus, MemoryKind};
use crate::prompts::PromptSet;
use crate::store::{resolve_documents, ScoredMemory, StoreError};
use crate::token::TokenCounter;

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("context budget of {budget} tokens fits none of the {items} items")]
    BudgetTooSmall { budget: usize, items: usize },
    #[error("no choice letter found in model answer {raw:?}")]
    ChoiceParse { raw: String },
}

/// Whether the answer prompt carries the memories themselves or the
/// source documents they cite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    MemoryOnly,
    MemoryDoc,
}

impl AnswerMode {
    pub fn label(self) -> &'static str {
        match self {
            AnswerMode::MemoryOnly => "memory_only",
            AnswerMode::MemoryDoc => "memory_doc",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextItem {
    pub text: String,
    pub truncatable: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ContextReport {
    pub included: usize,
    pub skipped: usize,
    pub truncated: bool,
    pub tokens: usize,
}

#[derive(Debug, Clone)]
pub struct AnswerOutcome {
    pub answer_text: String,
    pub chosen_letter: Option<char>,
    pub context: ContextReport,
}

/// Greedy first-fit assembly in item order under `budget` tokens.
pub fn assemble_context(
    items: &[ContextItem],
    counter: &dyn TokenCounter,
    budget: usize,
) -> Result<(String, ContextReport), AnswerError> {
    let mut report = ContextReport::default();
    let mut parts: Vec<String> = Vec::new();
    for item in items {
        let remaining = budget - report.tokens;
        if remaining == 0 {
            break;
        }
        let tokens = counter.count(&item.text);
        if tokens <= remaining {
            parts.push(item.text.clone());
            report.included += 1;
            report.tokens += tokens;
            continue;
        }
        if item.truncatable {
            let spans = counter.spans(&item.text);
            let cut = spans[remaining - 1].end;
            parts.push(item.text[..cut].to_string());
            report.included += 1;
            report.tokens += remaining;
            report.truncated = true;
            break;
        }
        report.skipped += 1;
    }
    if report.included == 0 && !items.is_empty() {
        return Err(AnswerError::BudgetTooSmall {
            budget,
            items: items.len(),
        });
    }
    Ok((parts.join("\n\n"), report))
}

/// Context items straight from the memories, in rank order.
pub fn memory_items(hits: &[ScoredMemory]) -> Vec<ContextItem> {
    hits.iter()
        .map(|hit| ContextItem {
            text: render_text(&hit.unit),
            truncatable: matches!(hit.unit.kind(), MemoryKind::Chunk | MemoryKind::Summary),
        })
        .collect()
}

/// Context items from the source documents the memories cite, ordered
/// by first citation.
pub fn document_items(
    hits: &[ScoredMemory],
    corpus: &Corpus,
) -> Result<Vec<ContextItem>, AnswerError> {
    Ok(resolve_documents(hits, corpus)?
        .into_iter()
        .map(|doc| ContextItem {
            text: doc.text.clone(),
            truncatable: true,
        })
        .collect())
}

/// First standalone choice letter in the model's answer. Uppercase
/// tokens win over lowercase ones so the article "a" in a sentence does
/// not shadow an actual "B" pick.
pub fn extract_choice_letter(raw: &str, n_choices: usize) -> Option<char> {
    let max = (b'A' + n_choices.clamp(1, 26) as u8 - 1) as char;
    let cleaned = |token: &str| -> Option<char> {
        let t = token.trim_matches(|c: char| !c.is_ascii_alphanumeric());
        let mut chars = t.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    };
    for token in raw.split_whitespace() {
        if let Some(c) = cleaned(token) {
            if c.is_ascii_uppercase() && c <= max {
                return Some(c);
            }
        }
    }
    for token in raw.split_whitespace() {
        if let Some(c) = cleaned(token) {
            let up = c.to_ascii_uppercase();
            if up.is_ascii_uppercase() && up <= max {
                return Some(up);
            }
        }
    }
    None
}

pub fn render_choices(choices: &[String]) -> String {
    choices
        .iter()
        .enumerate()
        .map(|(i, choice)| format!("{}. {}", (b'A' + i as u8) as char, choice))
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct Answerer {
    gateway: Gateway,
    prompts: PromptSet,
    answer_reserve: usize,
    max_answer_tokens: usize,
    temperature: f64,
}

impl Answerer {
    pub fn new(gateway: &Gateway, prompts: &PromptSet) -> Self {
        Self {
            gateway: gateway.clone(),
            prompts: prompts.clone(),
            answer_reserve: 512,
            max_answer_tokens: 512,
            temperature: 0.2,
        }
    }

    pub fn with_reserve(mut self, answer_reserve: usize) -> Self {
        self.answer_reserve = answer_reserve;
        self
    }

    pub fn with_max_tokens(mut self, max_answer_tokens: usize) -> Self {
        self.max_answer_tokens = max_answer_tokens;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    fn budget(&self, overhead: usize) -> usize {
        self.gateway
            .window()
            .saturating_sub(self.answer_reserve)
            .saturating_sub(overhead)
    }

    fn items(
        &self,
        hits: &[ScoredMemory],
        mode: AnswerMode,
        corpus: &Corpus,
    ) -> Result<Vec<ContextItem>, AnswerError> {
        match mode {
            AnswerMode::MemoryOnly => Ok(memory_items(hits)),
            AnswerMode::MemoryDoc => document_items(hits, corpus),
        }
    }

    fn complete(&self, system: String, user: String) -> Result<String, AnswerError> {
        let request = ChatRequest::new(system, user, self.max_answer_tokens)?
            .with_temperature(self.temperature)?;
        Ok(self.gateway.complete(&request)?)
    }

    /// Free-form answer for short-answer questions.
    pub fn answer_qa(
        &self,
        question: &str,
        hits: &[ScoredMemory],
        mode: AnswerMode,
        corpus: &Corpus,
    ) -> Result<AnswerOutcome, AnswerError> {
        let items = self.items(hits, mode, corpus)?;
        let counter = self.gateway.token_counter();
        let (osys, ouser) = self.prompts.answer_qa("", question);
        let overhead = counter.count(&osys) + counter.count(&ouser);
        let (context, report) = assemble_context(&items, &*counter, self.budget(overhead))?;
        let (system, user) = self.prompts.answer_qa(&context, question);
        let raw = self.complete(system, user)?;
        let mut answer = raw.trim();
        for prefix in ["Answer:", "answer:", "ANSWER:"] {
            if let Some(rest) = answer.strip_prefix(prefix) {
                answer = rest.trim();
                break;
            }
        }
        Ok(AnswerOutcome {
            answer_text: answer.to_string(),
            chosen_letter: None,
            context: report,
        })
    }

    /// Letter pick for multiple-choice questions.
    pub fn answer_mc(
        &self,
        question: &str,
        choices: &[String],
        hits: &[ScoredMemory],
        mode: AnswerMode,
        corpus: &Corpus,
    ) -> Result<AnswerOutcome, AnswerError> {
        let items = self.items(hits, mode, corpus)?;
        let counter = self.gateway.token_counter();
        let rendered = render_choices(choices);
        let (osys, ouser) = self.prompts.answer_mc("", question, &rendered);
        let overhead = counter.count(&osys) + counter.count(&ouser);
        let (context, report) = assemble_context(&items, &*counter, self.budget(overhead))?;
        let (system, user) = self.prompts.answer_mc(&context, question, &rendered);
        let raw = self.complete(system, user)?;
        let letter = extract_choice_letter(&raw, choices.len())
            .ok_or_else(|| AnswerError::ChoiceParse { raw: raw.clone() })?;
        Ok(AnswerOutcome {
            answer_text: raw.trim().to_string(),
            chosen_letter: Some(letter),
            context: report,
        })
    }
}
