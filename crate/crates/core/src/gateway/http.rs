//! OpenAI-compatible `/chat/completions` and `/embeddings` over blocking HTTP.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{BackendError, BackendReply, ChatBackend, ChatRequest, EmbedBackend};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to and including the version segment, e.g. `https://api.deepseek.com/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

fn client(cfg: &HttpConfig) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

fn post(
    client: &reqwest::blocking::Client,
    cfg: &HttpConfig,
    path: &str,
    body: &Value,
) -> Result<Value, BackendError> {
    let url = format!("{}/{}", cfg.base_url.trim_end_matches('/'), path);
    let mut req = client.post(&url).json(body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    if status.is_server_error() || status.as_u16() == 429 {
        return Err(BackendError::Transport(format!("{status}: {}", truncate(&text))));
    }
    if !status.is_success() {
        return Err(BackendError::Malformed(format!("{status}: {}", truncate(&text))));
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("invalid JSON body: {e}")))
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

/// Request body for one chat call.
pub fn chat_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_prompt},
        ],
        "temperature": request.temperature,
        "stream": false,
    });
    if let Some(max) = request.max_output_tokens {
        body["max_tokens"] = json!(max);
    }
    if request.thinking_disabled {
        body["thinking"] = json!({"type": "disabled"});
    }
    body
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

pub fn parse_chat_completion(body: Value) -> Result<BackendReply, BackendError> {
    let parsed: ChatCompletion =
        serde_json::from_value(body).map_err(|e| BackendError::Malformed(format!("unexpected chat payload: {e}")))?;
    let text = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::Malformed("chat reply has no message content".into()))?;
    Ok(BackendReply {
        text,
        prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
        output_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
    })
}

pub struct OpenAiChat {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl OpenAiChat {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        Ok(OpenAiChat {
            client: client(&cfg)?,
            cfg,
        })
    }
}

impl ChatBackend for OpenAiChat {
    fn complete(&self, _label: &str, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        parse_chat_completion(post(&self.client, &self.cfg, "chat/completions", &chat_body(request))?)
    }
}

#[derive(Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

pub fn parse_embeddings(body: Value, expected: usize) -> Result<Vec<Vec<f32>>, BackendError> {
    let list: EmbeddingList =
        serde_json::from_value(body).map_err(|e| BackendError::Malformed(format!("unexpected embeddings payload: {e}")))?;
    let mut items = list.data;
    if items.len() != expected {
        return Err(BackendError::Malformed(format!(
            "expected {expected} embeddings, got {}",
            items.len()
        )));
    }
    if items.iter().all(|i| i.index.is_some()) {
        items.sort_by_key(|i| i.index);
    }
    Ok(items.into_iter().map(|i| i.embedding).collect())
}

pub struct OpenAiEmbedder {
    cfg: HttpConfig,
    model: String,
    client: reqwest::blocking::Client,
}

impl OpenAiEmbedder {
    pub fn new(cfg: HttpConfig, model: impl Into<String>) -> Result<Self, BackendError> {
        Ok(OpenAiEmbedder {
            client: client(&cfg)?,
            cfg,
            model: model.into(),
        })
    }
}

impl EmbedBackend for OpenAiEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = json!({"model": self.model, "input": texts});
        parse_embeddings(post(&self.client, &self.cfg, "embeddings", &body)?, texts.len())
    }
}
