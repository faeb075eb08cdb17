//! Structural memory for LLM agents: turn raw documents into chunks,
//! knowledge triples, atomic facts, and summaries; retrieve them with
//! single-step, reranked, or iterative strategies; and answer questions
//! from the memories alone or from the documents they point back to.
//! Everything runs offline against deterministic mock providers, so the
//! full pipeline is testable without network access.

pub mod answer;
pub mod builder;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod harness;
pub mod model;
pub mod prompts;
pub mod retrieval;
pub mod store;
pub mod token;
