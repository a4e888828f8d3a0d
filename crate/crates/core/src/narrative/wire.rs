//! Chat-completion client over HTTP.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendError, LlmBackend};

pub const API_KEY_ENV: &str = "TALEFORGE_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for WireConfig {
    fn default() -> Self {
        WireConfig {
            endpoint: "http://localhost:8080/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            timeout_secs: 60,
            temperature: 0.7,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

/// Sends `{model, messages, seed, temperature}` and reads
/// `choices[0].message.content`. Transient failures (transport errors,
/// 429, 5xx) are retried with exponential backoff.
pub struct WireBackend {
    config: WireConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl WireBackend {
    /// Builds a client, reading the API key from `TALEFORGE_LLM_KEY`.
    pub fn from_env(config: WireConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    pub fn new(config: WireConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if config.endpoint.is_empty() {
            return Err(BackendError::Config("wire backend needs an endpoint".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(WireBackend {
            config,
            api_key,
            client,
        })
    }

    fn attempt(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "seed": seed,
            "temperature": self.config.temperature,
        });
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message.content".into()))
    }
}

impl LlmBackend for WireBackend {
    fn complete(&self, prompt: &str, sampling_seed: u64) -> Result<String, BackendError> {
        let mut attempt = 0;
        loop {
            match self.attempt(prompt, sampling_seed) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt);
                    log::warn!("llm request failed ({e}); retry {} in {delay} ms", attempt + 1);
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
