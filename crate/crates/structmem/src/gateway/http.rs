//! OpenAI-compatible HTTP backend. Wire formatting and parsing are
//! plain functions so they are testable without a socket; transport
//! retries transient failures (connect errors, 429, 5xx) with
//! exponential backoff and surfaces everything else as-is.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, GatewayError, Provider, ProviderConfig};

const BASE_BACKOFF_MS: u64 = 200;
const MAX_BACKOFF_MS: u64 = 5_000;

pub struct HttpProvider {
    cfg: ProviderConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpProvider {
    /// Reads the API key from the environment variable named in the
    /// config; a missing variable means unauthenticated requests, which
    /// suits local OpenAI-compatible servers.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_s))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            cfg: cfg.clone(),
            client,
            api_key,
        })
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post_with_retries(&self, url: &str, body: &Value) -> Result<String, GatewayError> {
        let mut last_failure = String::from("no attempt made");
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let exp = BASE_BACKOFF_MS.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(exp.min(MAX_BACKOFF_MS)));
            }
            let mut request = self.client.post(url).json(body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            let text = match response.text() {
                Ok(t) => t,
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            if status.is_success() {
                return Ok(text);
            }
            if status.as_u16() == 429 || status.is_server_error() {
                last_failure = format!("status {}: {}", status.as_u16(), truncate(&text));
                continue;
            }
            return Err(GatewayError::Provider {
                status: status.as_u16(),
                body: truncate(&text),
            });
        }
        Err(GatewayError::Transport(last_failure))
    }
}

impl Provider for HttpProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = build_chat_body(&self.cfg.model_name, request);
        let raw = self.post_with_retries(&self.endpoint("chat/completions"), &body)?;
        parse_chat_response(&raw)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let body = build_embed_body(&self.cfg.embed_model_name, texts);
        let raw = self.post_with_retries(&self.endpoint("embeddings"), &body)?;
        parse_embed_response(&raw, texts.len())
    }

    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }

    fn embed_model_name(&self) -> &str {
        &self.cfg.embed_model_name
    }
}

fn truncate(text: &str) -> String {
    if text.len() <= 500 {
        return text.to_string();
    }
    let cut = text
        .char_indices()
        .take_while(|(i, _)| *i < 500)
        .last()
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    format!("{}...", &text[..cut])
}

pub fn build_chat_body(model: &str, request: &ChatRequest) -> Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_prompt},
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

pub fn parse_chat_response(raw: &str) -> Result<String, GatewayError> {
    let malformed = |why: &str| GatewayError::Provider {
        status: 200,
        body: format!("malformed chat response ({why}): {}", truncate(raw)),
    };
    let value: Value = serde_json::from_str(raw).map_err(|_| malformed("not json"))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| malformed("no choices[0].message.content"))
}

pub fn build_embed_body(model: &str, texts: &[String]) -> Value {
    json!({
        "model": model,
        "input": texts,
    })
}

pub fn parse_embed_response(raw: &str, expected: usize) -> Result<Vec<Vec<f32>>, GatewayError> {
    let malformed = |why: String| GatewayError::Provider {
        status: 200,
        body: format!("malformed embeddings response ({why}): {}", truncate(raw)),
    };
    let value: Value = serde_json::from_str(raw).map_err(|_| malformed("not json".to_string()))?;
    let data = value["data"]
        .as_array()
        .ok_or_else(|| malformed("no data array".to_string()))?;
    if data.len() != expected {
        return Err(malformed(format!(
            "{} rows for {} inputs",
            data.len(),
            expected
        )));
    }
    let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
    for (fallback_index, row) in data.iter().enumerate() {
        let index = row["index"]
            .as_u64()
            .map(|i| i as usize)
            .unwrap_or(fallback_index);
        let values = row["embedding"]
            .as_array()
            .ok_or_else(|| malformed(format!("row {index} has no embedding")))?
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| malformed(format!("row {index} has a non-numeric value")))?;
        rows.push((index, values));
    }
    rows.sort_by_key(|(index, _)| *index);
    Ok(rows.into_iter().map(|(_, values)| values).collect())
}
