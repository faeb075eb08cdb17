//! Single entry point for every model call: chat completions and text
//! embeddings, routed through a persistent response cache, an input-window
//! guard, and a bounded in-flight limit. Providers are pluggable so the
//! whole pipeline runs offline against scripted or derived responses.

mod cache;
mod http;
mod mock;

pub use cache::{CacheStats, ResponseCache};
pub use http::HttpProvider;
pub use mock::{DemoProvider, HashEmbedder, Matcher, ScriptedProvider};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::token::{SharedCounter, WordPunctCounter};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after retries: {0}")]
    Transport(String),
    #[error("prompt of {tokens} tokens exceeds the {window}-token input window")]
    ContextOverflow { tokens: usize, window: usize },
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("no scripted response matches the prompt: {prompt:?}")]
    Unscripted { prompt: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache-only mode has no stored response for this request")]
    OfflineMiss,
    #[error("embedding has dimension {got}, expected {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("cache io: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// Connection settings plus the limits the gateway enforces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    pub embed_model_name: String,
    /// Name of the environment variable holding the API key. The key
    /// itself never appears in config files.
    pub api_key_env: String,
    pub input_window_tokens: usize,
    pub request_timeout_s: u64,
    pub max_retries: u32,
    pub embed_dim: usize,
    pub max_in_flight: usize,
    pub max_tokens_answer: usize,
    pub max_tokens_memory: usize,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4o-mini".to_string(),
            embed_model_name: "text-embedding-3-small".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            input_window_tokens: 4096,
            request_timeout_s: 60,
            max_retries: 3,
            embed_dim: 1536,
            max_in_flight: 4,
            max_tokens_answer: 512,
            max_tokens_memory: 2048,
            temperature: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    pub fn new(
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
        max_tokens: usize,
    ) -> Result<Self, GatewayError> {
        let system_prompt = system_prompt.into();
        let user_prompt = user_prompt.into();
        if system_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "system prompt is empty".into(),
            ));
        }
        if user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user prompt is empty".into()));
        }
        if max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens is zero".into()));
        }
        Ok(Self {
            system_prompt,
            user_prompt,
            temperature: 0.2,
            max_tokens,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, GatewayError> {
        if !(0.0..=2.0).contains(&temperature) || temperature.is_nan() {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::InvalidRequest("empty embedding".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(GatewayError::InvalidRequest("all-zero embedding".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// A backend that can complete chats and embed texts. Implementations
/// must be deterministic for identical inputs when used offline.
pub trait Provider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
    fn model_name(&self) -> &str;
    fn embed_model_name(&self) -> &str;
}

/// Provider that refuses every network call; combined with a warm cache
/// it replays a previous run byte for byte.
pub struct CacheOnlyProvider {
    model: String,
    embed_model: String,
}

impl CacheOnlyProvider {
    pub fn new(model: impl Into<String>, embed_model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            embed_model: embed_model.into(),
        }
    }
}

impl Provider for CacheOnlyProvider {
    fn chat(&self, _request: &ChatRequest) -> Result<String, GatewayError> {
        Err(GatewayError::OfflineMiss)
    }

    fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Err(GatewayError::OfflineMiss)
    }

    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed_model_name(&self) -> &str {
        &self.embed_model
    }
}

#[derive(Default)]
struct StatsCells {
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
    cache_hits: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    embedded_texts: AtomicU64,
}

/// Point-in-time copy of gateway counters. Call counts reflect actual
/// network traffic; token counts accrue on cache hits too, so they are
/// stable across warm and cold runs.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub cache_hits: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub embedded_texts: u64,
}

impl StatsSnapshot {
    pub fn network_calls(&self) -> u64 {
        self.chat_calls + self.embed_calls
    }

    pub fn minus(&self, earlier: &StatsSnapshot) -> StatsSnapshot {
        StatsSnapshot {
            chat_calls: self.chat_calls - earlier.chat_calls,
            embed_calls: self.embed_calls - earlier.embed_calls,
            cache_hits: self.cache_hits - earlier.cache_hits,
            prompt_tokens: self.prompt_tokens - earlier.prompt_tokens,
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
            embedded_texts: self.embedded_texts - earlier.embedded_texts,
        }
    }
}

impl StatsCells {
    fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            chat_calls: self.chat_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            completion_tokens: self.completion_tokens.load(Ordering::SeqCst),
            embedded_texts: self.embedded_texts.load(Ordering::SeqCst),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.available.notify_one();
    }
}

/// Tracks chat keys currently being fetched so concurrent identical
/// requests wait for one network call instead of issuing their own.
#[derive(Default)]
struct InflightTable {
    keys: Mutex<std::collections::HashSet<String>>,
    done: Condvar,
}

const EMBED_BATCH: usize = 512;

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    cache: Arc<ResponseCache>,
    counter: SharedCounter,
    window: usize,
    embed_dim: usize,
    run_stats: Arc<StatsCells>,
    local_stats: Arc<StatsCells>,
    inflight: Arc<InflightTable>,
    semaphore: Arc<Semaphore>,
}

impl Gateway {
    pub fn new(
        provider: Arc<dyn Provider>,
        cache: ResponseCache,
        counter: SharedCounter,
        window: usize,
        embed_dim: usize,
        max_in_flight: usize,
    ) -> Self {
        Self {
            provider,
            cache: Arc::new(cache),
            counter,
            window,
            embed_dim,
            run_stats: Arc::new(StatsCells::default()),
            local_stats: Arc::new(StatsCells::default()),
            inflight: Arc::new(InflightTable::default()),
            semaphore: Arc::new(Semaphore::new(max_in_flight)),
        }
    }

    /// Gateway over a scripted provider with an in-memory cache; the
    /// standard harness for offline tests.
    pub fn scripted(rules: Vec<(Matcher, String)>, embed_dim: usize) -> Self {
        let provider = ScriptedProvider::new(rules, embed_dim);
        Self::new(
            Arc::new(provider),
            ResponseCache::in_memory(),
            WordPunctCounter::shared(),
            4096,
            embed_dim,
            4,
        )
    }

    /// Same run-wide counters and cache, fresh per-question counters.
    pub fn for_question(&self) -> Gateway {
        let mut clone = self.clone();
        clone.local_stats = Arc::new(StatsCells::default());
        clone
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn model_name(&self) -> &str {
        self.provider.model_name()
    }

    pub fn embed_model_name(&self) -> &str {
        self.provider.embed_model_name()
    }

    pub fn token_counter(&self) -> SharedCounter {
        Arc::clone(&self.counter)
    }

    pub fn run_stats(&self) -> StatsSnapshot {
        self.run_stats.snapshot()
    }

    pub fn local_stats(&self) -> StatsSnapshot {
        self.local_stats.snapshot()
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    fn bump(&self, pick: impl Fn(&StatsCells) -> &AtomicU64, by: u64) {
        pick(&self.run_stats).fetch_add(by, Ordering::SeqCst);
        pick(&self.local_stats).fetch_add(by, Ordering::SeqCst);
    }

    fn chat_key(&self, request: &ChatRequest) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"chat");
        hasher.update([0x1f]);
        hasher.update(self.provider.model_name().as_bytes());
        hasher.update([0x1f]);
        hasher.update(request.system_prompt.as_bytes());
        hasher.update([0x1f]);
        hasher.update(request.user_prompt.as_bytes());
        hasher.update([0x1f]);
        hasher.update(format!("{}", request.temperature).as_bytes());
        hasher.update([0x1f]);
        hasher.update(request.max_tokens.to_string().as_bytes());
        hex(&hasher.finalize())
    }

    fn embed_key(&self, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"embed");
        hasher.update([0x1f]);
        hasher.update(self.provider.embed_model_name().as_bytes());
        hasher.update([0x1f]);
        hasher.update(text.as_bytes());
        hex(&hasher.finalize())
    }

    /// Number of input tokens a request will consume, by the same counter
    /// used for chunking.
    pub fn prompt_tokens(&self, request: &ChatRequest) -> usize {
        self.counter.count(&request.system_prompt) + self.counter.count(&request.user_prompt)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let tokens = self.prompt_tokens(request);
        if tokens > self.window {
            return Err(GatewayError::ContextOverflow {
                tokens,
                window: self.window,
            });
        }
        self.bump(|s| &s.prompt_tokens, tokens as u64);
        let key = self.chat_key(request);

        loop {
            if let Some(hit) = self.cache.get(&key) {
                self.bump(|s| &s.cache_hits, 1);
                self.bump(|s| &s.completion_tokens, self.counter.count(&hit) as u64);
                return Ok(hit);
            }
            let mut keys = self.inflight.keys.lock().unwrap();
            if self.cache.get(&key).is_some() {
                continue;
            }
            if keys.contains(&key) {
                let _unused = self.inflight.done.wait(keys).unwrap();
                continue;
            }
            keys.insert(key.clone());
            break;
        }

        let outcome: Result<String, GatewayError> = (|| {
            self.semaphore.acquire();
            let result = self.provider.chat(request);
            self.semaphore.release();
            let response = result?;
            self.bump(|s| &s.chat_calls, 1);
            self.bump(
                |s| &s.completion_tokens,
                self.counter.count(&response) as u64,
            );
            self.cache
                .put(&key, self.provider.model_name(), &response)?;
            Ok(response)
        })();

        let mut keys = self.inflight.keys.lock().unwrap();
        keys.remove(&key);
        self.inflight.done.notify_all();
        drop(keys);
        outcome
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "embed called with no texts".into(),
            ));
        }
        if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!(
                "embed text at position {pos} is empty"
            )));
        }
        self.bump(|s| &s.embedded_texts, texts.len() as u64);

        let keys: Vec<String> = texts.iter().map(|t| self.embed_key(t)).collect();
        let mut vectors: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            match self.cache.get(key) {
                Some(encoded) => {
                    self.bump(|s| &s.cache_hits, 1);
                    vectors[i] = Some(self.decode_vector(&encoded)?);
                }
                None => missing.push(i),
            }
        }

        for batch in missing.chunks(EMBED_BATCH) {
            let inputs: Vec<String> = batch.iter().map(|&i| texts[i].clone()).collect();
            self.semaphore.acquire();
            let result = self.provider.embed(&inputs);
            self.semaphore.release();
            let raw = result?;
            self.bump(|s| &s.embed_calls, 1);
            if raw.len() != inputs.len() {
                return Err(GatewayError::Provider {
                    status: 0,
                    body: format!(
                        "provider returned {} embeddings for {} inputs",
                        raw.len(),
                        inputs.len()
                    ),
                });
            }
            for (&i, values) in batch.iter().zip(raw) {
                if values.len() != self.embed_dim {
                    return Err(GatewayError::DimMismatch {
                        got: values.len(),
                        want: self.embed_dim,
                    });
                }
                let encoded = encode_f32s(&values);
                self.cache
                    .put(&keys[i], self.provider.embed_model_name(), &encoded)?;
                vectors[i] = Some(EmbeddingVector::new(values)?);
            }
        }

        Ok(vectors.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn decode_vector(&self, encoded: &str) -> Result<EmbeddingVector, GatewayError> {
        let values = decode_f32s(encoded).ok_or_else(|| {
            GatewayError::InvalidRequest("cached embedding failed to decode".into())
        })?;
        if values.len() != self.embed_dim {
            return Err(GatewayError::DimMismatch {
                got: values.len(),
                want: self.embed_dim,
            });
        }
        EmbeddingVector::new(values)
    }
}

pub fn encode_f32s(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_f32s(encoded: &str) -> Option<Vec<f32>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(encoded)
        .ok()?;
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_gateway(dir: &std::path::Path) -> Gateway {
        let cache = ResponseCache::open(dir.join("cache.jsonl")).unwrap();
        Gateway::new(
            Arc::new(ScriptedProvider::new(
                vec![(Matcher::Substring("ping".into()), "pong".into())],
                8,
            )),
            cache,
            WordPunctCounter::shared(),
            4096,
            8,
            4,
        )
    }

    #[test]
    fn second_identical_chat_is_a_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let gw = demo_gateway(dir.path());
        let req = ChatRequest::new("sys", "ping now", 64).unwrap();
        assert_eq!(gw.complete(&req).unwrap(), "pong");
        assert_eq!(gw.complete(&req).unwrap(), "pong");
        let stats = gw.run_stats();
        assert_eq!(stats.chat_calls, 1);
        assert_eq!(stats.cache_hits, 1);
    }

    #[test]
    fn warm_cache_replays_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let req = ChatRequest::new("sys", "ping now", 64).unwrap();
        {
            let gw = demo_gateway(dir.path());
            gw.complete(&req).unwrap();
        }
        let cache = ResponseCache::open(dir.path().join("cache.jsonl")).unwrap();
        let gw = Gateway::new(
            Arc::new(CacheOnlyProvider::new("scripted-chat", "hash-embed")),
            cache,
            WordPunctCounter::shared(),
            4096,
            8,
            4,
        );
        assert_eq!(gw.complete(&req).unwrap(), "pong");
        assert_eq!(gw.run_stats().chat_calls, 0);
        let missed = ChatRequest::new("sys", "unseen", 64).unwrap();
        assert!(matches!(
            gw.complete(&missed),
            Err(GatewayError::OfflineMiss)
        ));
    }

    #[test]
    fn cache_key_separates_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let gw = demo_gateway(dir.path());
        let base = ChatRequest::new("sys", "ping a", 64).unwrap();
        let k0 = gw.chat_key(&base);
        let mut other = base.clone();
        other.user_prompt = "ping b".into();
        assert_ne!(k0, gw.chat_key(&other));
        let mut other = base.clone();
        other.system_prompt = "sys2".into();
        assert_ne!(k0, gw.chat_key(&other));
        let mut other = base.clone();
        other.temperature = 0.7;
        assert_ne!(k0, gw.chat_key(&other));
        let mut other = base.clone();
        other.max_tokens = 65;
        assert_ne!(k0, gw.chat_key(&other));
    }

    #[test]
    fn oversized_prompt_is_rejected_before_any_call() {
        let dir = tempfile::tempdir().unwrap();
        let gw = demo_gateway(dir.path());
        let long = vec!["word"; 5000].join(" ");
        let req = ChatRequest::new("sys", long, 64).unwrap();
        match gw.complete(&req) {
            Err(GatewayError::ContextOverflow { tokens, window }) => {
                assert!(tokens > window);
                assert_eq!(window, 4096);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
        assert_eq!(gw.run_stats().chat_calls, 0);
    }

    #[test]
    fn embeddings_cache_per_text() {
        let dir = tempfile::tempdir().unwrap();
        let gw = demo_gateway(dir.path());
        let texts = vec!["alpha beta".to_string(), "gamma".to_string()];
        let first = gw.embed(&texts).unwrap();
        let again = gw.embed(&texts).unwrap();
        assert_eq!(first, again);
        let stats = gw.run_stats();
        assert_eq!(stats.embed_calls, 1);
        assert_eq!(stats.cache_hits, 2);
        assert_eq!(stats.embedded_texts, 4);
    }

    #[test]
    fn embed_rejects_empty_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let gw = demo_gateway(dir.path());
        assert!(matches!(
            gw.embed(&[]),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert!(matches!(
            gw.embed(&["ok".into(), "  ".into()]),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn per_question_stats_reset_while_run_stats_accumulate() {
        let dir = tempfile::tempdir().unwrap();
        let gw = demo_gateway(dir.path());
        let req = ChatRequest::new("sys", "ping one", 64).unwrap();
        gw.complete(&req).unwrap();
        let q = gw.for_question();
        let req2 = ChatRequest::new("sys", "ping two", 64).unwrap();
        q.complete(&req2).unwrap();
        assert_eq!(q.local_stats().chat_calls, 1);
        assert_eq!(q.run_stats().chat_calls, 2);
        assert_eq!(gw.run_stats().chat_calls, 2);
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let values = vec![0.0f32, -1.5, 3.25, f32::MIN_POSITIVE, 1e30];
        let encoded = encode_f32s(&values);
        assert_eq!(decode_f32s(&encoded).unwrap(), values);
    }

    #[test]
    fn concurrent_identical_requests_share_one_network_call() {
        let dir = tempfile::tempdir().unwrap();
        let gw = demo_gateway(dir.path());
        let req = ChatRequest::new("sys", "ping shared", 64).unwrap();
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let gw = gw.clone();
                let req = req.clone();
                scope.spawn(move || gw.complete(&req).unwrap());
            }
        });
        assert_eq!(gw.run_stats().chat_calls, 1);
        assert_eq!(gw.run_stats().cache_hits, 7);
    }
}
