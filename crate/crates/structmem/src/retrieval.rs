//! The three retrieval strategies over a memory index. Single-step is a
//! plain top-K search. Rerank retrieves a K-sized pool and asks the
//! model to keep the R most useful. Iterative alternates retrieval and
//! model-rewritten queries for N rounds, then retrieves top-K with the
//! final query; N = 0 degenerates to single-step exactly. Model output
//! is repaired, never trusted: invalid rerank picks fall back to
//! retriever order and empty refinements keep the previous query, with
//! every repair recorded in the trace.

use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{render_text, RetrievalConfig, RetrievalStrategy};
use crate::prompts::PromptSet;
use crate::store::{MemoryIndex, ScoredMemory, StoreError};

/// Token cap applied to each memory snippet inside rerank and refine
/// prompts, so large pools still fit the input window.
const SNIPPET_TOKENS: usize = 64;
/// Completion budget for rerank and refine calls; both return a line.
const RETRIEVAL_MAX_TOKENS: usize = 256;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// What happened during retrieval: every query issued, every candidate
/// list in order, and any repairs applied to model output.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RetrievalTrace {
    pub strategy: RetrievalStrategy,
    pub queries: Vec<String>,
    pub candidate_lists: Vec<Vec<String>>,
    pub fallbacks: Vec<String>,
}

#[derive(Debug)]
pub struct RetrievalOutcome {
    pub hits: Vec<ScoredMemory>,
    pub trace: RetrievalTrace,
}

pub struct Retriever<'a> {
    index: &'a MemoryIndex,
    gateway: Gateway,
    prompts: PromptSet,
    config: RetrievalConfig,
    temperature: f64,
}

impl<'a> Retriever<'a> {
    pub fn new(
        index: &'a MemoryIndex,
        gateway: &Gateway,
        prompts: &PromptSet,
        config: RetrievalConfig,
    ) -> Self {
        Self {
            index,
            gateway: gateway.clone(),
            prompts: prompts.clone(),
            config,
            temperature: 0.2,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn retrieve(&self, question: &str) -> Result<RetrievalOutcome, RetrieveError> {
        match self.config.strategy {
            RetrievalStrategy::SingleStep => self.single_step(question),
            RetrievalStrategy::Rerank => self.rerank(question),
            RetrievalStrategy::Iterative => self.iterative(question),
        }
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredMemory>, RetrieveError> {
        Ok(self.index.search_text(query, &self.gateway, k)?)
    }

    fn chat(&self, system: String, user: String) -> Result<String, RetrieveError> {
        let request = ChatRequest::new(system, user, RETRIEVAL_MAX_TOKENS)?
            .with_temperature(self.temperature)?;
        Ok(self.gateway.complete(&request)?)
    }

    fn snippet(&self, text: &str) -> String {
        let counter = self.gateway.token_counter();
        let spans = counter.spans(text);
        if spans.len() <= SNIPPET_TOKENS {
            return text.to_string();
        }
        format!("{} ...", &text[..spans[SNIPPET_TOKENS - 1].end])
    }

    fn numbered(&self, hits: &[ScoredMemory]) -> String {
        hits.iter()
            .enumerate()
            .map(|(i, hit)| format!("{}. {}", i + 1, self.snippet(&render_text(&hit.unit))))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn ids(hits: &[ScoredMemory]) -> Vec<String> {
        hits.iter().map(|h| h.unit.mem_id().to_string()).collect()
    }

    fn single_step(&self, question: &str) -> Result<RetrievalOutcome, RetrieveError> {
        let hits = self.search(question, self.config.k_final)?;
        let trace = RetrievalTrace {
            strategy: RetrievalStrategy::SingleStep,
            queries: vec![question.to_string()],
            candidate_lists: vec![Self::ids(&hits)],
            fallbacks: vec![],
        };
        Ok(RetrievalOutcome { hits, trace })
    }

    fn rerank(&self, question: &str) -> Result<RetrievalOutcome, RetrieveError> {
        let pool = self.search(question, self.config.k_final)?;
        let mut trace = RetrievalTrace {
            strategy: RetrievalStrategy::Rerank,
            queries: vec![question.to_string()],
            candidate_lists: vec![Self::ids(&pool)],
            fallbacks: vec![],
        };
        if pool.is_empty() {
            trace.candidate_lists.push(vec![]);
            return Ok(RetrievalOutcome {
                hits: vec![],
                trace,
            });
        }

        let keep = self.config.r_rerank.min(pool.len());
        let (system, user) = self.prompts.rerank(question, &self.numbered(&pool), keep);
        let raw = self.chat(system, user)?;

        let mut picks: Vec<usize> = Vec::new();
        for n in crate::builder::parse::parse_rank_list(&raw) {
            if (1..=pool.len()).contains(&n) && !picks.contains(&(n - 1)) {
                picks.push(n - 1);
                if picks.len() == keep {
                    break;
                }
            }
        }
        if picks.is_empty() {
            trace.fallbacks.push("rerank_parse".to_string());
            picks = (0..keep).collect();
        } else if picks.len() < keep {
            trace.fallbacks.push("rerank_fill".to_string());
            for i in 0..pool.len() {
                if !picks.contains(&i) {
                    picks.push(i);
                    if picks.len() == keep {
                        break;
                    }
                }
            }
        }

        let hits: Vec<ScoredMemory> = picks
            .into_iter()
            .enumerate()
            .map(|(rank0, i)| ScoredMemory {
                unit: pool[i].unit.clone(),
                score: pool[i].score,
                rank: rank0 + 1,
            })
            .collect();
        trace.candidate_lists.push(Self::ids(&hits));
        Ok(RetrievalOutcome { hits, trace })
    }

    fn iterative(&self, question: &str) -> Result<RetrievalOutcome, RetrieveError> {
        let mut trace = RetrievalTrace {
            strategy: RetrievalStrategy::Iterative,
            queries: vec![question.to_string()],
            candidate_lists: vec![],
            fallbacks: vec![],
        };
        let mut query = question.to_string();
        for round in 1..=self.config.n_iters {
            let hits = self.search(&query, self.config.t_per_iter)?;
            trace.candidate_lists.push(Self::ids(&hits));
            if hits.is_empty() {
                trace
                    .fallbacks
                    .push(format!("refine_skipped_empty@{round}"));
                trace.queries.push(query.clone());
                continue;
            }
            let (system, user) = self.prompts.refine(question, &query, &self.numbered(&hits));
            let raw = self.chat(system, user)?;
            let refined = raw.split_whitespace().collect::<Vec<_>>().join(" ");
            if refined.is_empty() {
                trace.fallbacks.push(format!("refine_empty@{round}"));
            } else {
                query = refined;
            }
            trace.queries.push(query.clone());
        }
        let hits = self.search(&query, self.config.k_final)?;
        trace.candidate_lists.push(Self::ids(&hits));
        Ok(RetrievalOutcome { hits, trace })
    }
}
