//! OpenAI-compatible embeddings and chat-completions client.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{reject_empty, Embedder, LanguageModel, ANSWER_PROMPT, NO_CONTEXT, SELECT_PROMPT, SUMMARIZE_PROMPT};
use crate::embedding::Embedding;
use crate::error::ProviderError;
use crate::ids::NodeId;

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const API_KEY_ENV: &str = "CAM_API_KEY";
pub const API_BASE_ENV: &str = "CAM_API_BASE";

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub api_key_env_name: String,
    pub embed_model_name: String,
    pub chat_model_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Base delay before a retry; doubles on every further attempt.
    pub retry_backoff: Duration,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: DEFAULT_API_BASE.to_string(),
            api_key_env_name: API_KEY_ENV.to_string(),
            embed_model_name: "text-embedding-3-small".to_string(),
            chat_model_name: "gpt-4o-mini".to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            retry_backoff: Duration::from_millis(200),
            temperature: 0.0,
        }
    }
}

impl ProviderConfig {
    /// Defaults with the endpoint overridden by `CAM_API_BASE` when set.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(base) = std::env::var(API_BASE_ENV) {
            if !base.trim().is_empty() {
                cfg.endpoint_url = base;
            }
        }
        cfg
    }

    pub fn api_key(&self) -> Result<String, ProviderError> {
        match std::env::var(&self.api_key_env_name) {
            Ok(k) if !k.trim().is_empty() => Ok(k),
            _ => Err(ProviderError::Config(format!("environment variable {} is not set", self.api_key_env_name))),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal JSON-over-HTTP POST. `Err` means no HTTP response was obtained.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, String>;
}

#[derive(Debug)]
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl UreqTransport {
    pub fn new() -> Self {
        Self { agent: ureq::AgentBuilder::new().build() }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, String> {
        let resp = self
            .agent
            .post(url)
            .timeout(timeout)
            .set("Authorization", &format!("Bearer {api_key}"))
            .send_json(body.clone());
        match resp {
            Ok(r) => {
                let status = r.status();
                r.into_string().map(|body| HttpResponse { status, body }).map_err(|e| e.to_string())
            }
            Err(ureq::Error::Status(status, r)) => Ok(HttpResponse { status, body: r.into_string().unwrap_or_default() }),
            Err(e) => Err(e.to_string()),
        }
    }
}

pub struct OpenAiClient {
    config: ProviderConfig,
    api_key: String,
    transport: Arc<dyn Transport>,
}

impl std::fmt::Debug for OpenAiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiClient").field("config", &self.config).finish_non_exhaustive()
    }
}

impl OpenAiClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: ProviderConfig) -> Result<Self, ProviderError> {
        let key = config.api_key()?;
        Ok(Self::with_transport(config, key, Arc::new(UreqTransport::new())))
    }

    pub fn with_transport(config: ProviderConfig, api_key: String, transport: Arc<dyn Transport>) -> Self {
        Self { config, api_key, transport }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = self.config.url(path);
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let retryable = match self.transport.post_json(&url, &self.api_key, body, self.config.timeout) {
                Ok(HttpResponse { status, body }) if (200..300).contains(&status) => {
                    return serde_json::from_str(&body).map_err(|e| ProviderError::Protocol(e.to_string()));
                }
                Ok(HttpResponse { status, body }) => {
                    let err = ProviderError::Http { status, attempts: attempt, body };
                    if status == 429 || status >= 500 {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(message) => ProviderError::Transport { attempts: attempt, message },
            };
            if attempt >= max_attempts {
                return Err(retryable);
            }
            std::thread::sleep(self.config.retry_backoff * (1 << (attempt - 1).min(6)));
        }
    }

    fn chat(&self, prompt: String) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.config.chat_model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let resp = self.post("chat/completions", &body)?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.trim().to_string())
            .ok_or_else(|| ProviderError::Protocol("chat response without choices[0].message.content".into()))
    }
}

impl Embedder for OpenAiClient {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        reject_empty(texts)?;
        let body = json!({ "model": self.config.embed_model_name, "input": texts });
        let resp = self.post("embeddings", &body)?;
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Protocol("embeddings response without data".into()))?;
        let mut rows: Vec<(u64, Embedding)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let idx = item["index"].as_u64().unwrap_or(pos as u64);
            let values = item["embedding"]
                .as_array()
                .ok_or_else(|| ProviderError::Protocol("embedding entry without vector".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| ProviderError::Protocol("non-numeric embedding value".into())))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push((idx, Embedding::new(values)));
        }
        rows.sort_by_key(|(i, _)| *i);
        if rows.len() != texts.len() {
            return Err(ProviderError::Protocol(format!("expected {} embeddings, got {}", texts.len(), rows.len())));
        }
        Ok(rows.into_iter().map(|(_, e)| e).collect())
    }
}

fn parse_selection(reply: &str, candidates: &[(NodeId, String)]) -> BTreeSet<NodeId> {
    let known: BTreeSet<NodeId> = candidates.iter().map(|(id, _)| *id).collect();
    let array = reply
        .find('[')
        .zip(reply.rfind(']'))
        .and_then(|(a, b)| serde_json::from_str::<Vec<String>>(&reply[a..=b]).ok());
    let tokens: Vec<String> = match array {
        Some(ids) => ids,
        None => reply
            .split(|c: char| !(c.is_ascii_alphanumeric() || c == ':'))
            .map(str::to_string)
            .collect(),
    };
    tokens
        .iter()
        .filter_map(|t| t.trim().parse::<NodeId>().ok())
        .filter(|id| known.contains(id))
        .collect()
}

impl LanguageModel for OpenAiClient {
    fn summarize(&self, texts: &[String], level: u32) -> Result<String, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidInput("nothing to summarize".into()));
        }
        let passages: String = texts.iter().enumerate().map(|(i, t)| format!("({}) {}\n", i + 1, t)).collect();
        let prompt = SUMMARIZE_PROMPT.replace("{level}", &level.to_string()).replace("{passages}", &passages);
        let out = self.chat(prompt)?;
        if out.is_empty() {
            return Err(ProviderError::Protocol("empty summary".into()));
        }
        Ok(out)
    }

    fn select_relevant(
        &self,
        query: &str,
        candidates: &[(NodeId, String)],
    ) -> Result<BTreeSet<NodeId>, ProviderError> {
        if candidates.is_empty() {
            return Ok(BTreeSet::new());
        }
        let listing: String = candidates.iter().map(|(id, t)| format!("[{id}] {t}\n")).collect();
        let prompt = SELECT_PROMPT.replace("{candidates}", &listing).replace("{query}", query);
        Ok(parse_selection(&self.chat(prompt)?, candidates))
    }

    fn answer(&self, query: &str, context_blocks: &[String]) -> Result<String, ProviderError> {
        let context = if context_blocks.is_empty() { NO_CONTEXT.to_string() } else { context_blocks.join("\n\n") };
        let prompt = ANSWER_PROMPT.replace("{context}", &context).replace("{query}", query);
        let out = self.chat(prompt)?;
        Ok(if out.is_empty() { NO_CONTEXT.to_string() } else { out })
    }
}
