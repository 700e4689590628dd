//! Deterministic offline backends.
//!
//! [`ScriptedChat`] resolves each call by, in order: the oracle closure (if it
//! returns `Some`), the first matching `(label, regex)` rule, the default reply.
//! A call nothing answers is a malformed-reply error, which keeps broken
//! scripts loud instead of silently empty.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendReply, ChatBackend, ChatRequest, EmbedBackend};

pub type Oracle = dyn Fn(&str, &ChatRequest) -> Option<String> + Send + Sync;

#[derive(Debug, Clone)]
struct Rule {
    label: Option<String>,
    pattern: Regex,
    reply: String,
    prompt_tokens: Option<u64>,
    output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedCall {
    pub label: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub reply: String,
}

#[derive(Default)]
pub struct ScriptedChat {
    rules: Vec<Rule>,
    default_reply: Option<String>,
    oracle: Option<Arc<Oracle>>,
    latency: Option<Duration>,
    record: bool,
    log: Mutex<Vec<LoggedCall>>,
    invocations: AtomicU64,
}

impl std::fmt::Debug for ScriptedChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedChat")
            .field("rules", &self.rules.len())
            .field("oracle", &self.oracle.is_some())
            .finish()
    }
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(self, label: Option<&str>, pattern: &str, reply: &str) -> Self {
        self.push_rule(label, pattern, reply, None, None)
    }

    pub fn rule_with_usage(self, label: Option<&str>, pattern: &str, reply: &str, prompt: u64, output: u64) -> Self {
        self.push_rule(label, pattern, reply, Some(prompt), Some(output))
    }

    fn push_rule(mut self, label: Option<&str>, pattern: &str, reply: &str, p: Option<u64>, o: Option<u64>) -> Self {
        self.rules.push(Rule {
            label: label.map(str::to_owned),
            pattern: Regex::new(pattern).expect("invalid rule pattern"),
            reply: reply.to_owned(),
            prompt_tokens: p,
            output_tokens: o,
        });
        self
    }

    pub fn default_reply(mut self, reply: &str) -> Self {
        self.default_reply = Some(reply.to_owned());
        self
    }

    pub fn oracle<F>(mut self, f: F) -> Self
    where
        F: Fn(&str, &ChatRequest) -> Option<String> + Send + Sync + 'static,
    {
        self.oracle = Some(Arc::new(f));
        self
    }

    /// Sleeps this long on every call, to stand in for endpoint latency.
    pub fn latency(mut self, d: Duration) -> Self {
        self.latency = Some(d);
        self
    }

    /// Keeps every prompt and reply for later inspection.
    pub fn record_prompts(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> Vec<LoggedCall> {
        self.log.lock().unwrap().clone()
    }

    fn resolve(&self, label: &str, request: &ChatRequest) -> Option<BackendReply> {
        if let Some(oracle) = &self.oracle {
            if let Some(text) = oracle(label, request) {
                return Some(BackendReply::text(text));
            }
        }
        let prompt = request.full_prompt();
        for rule in &self.rules {
            if rule.label.as_deref().is_some_and(|l| l != label) {
                continue;
            }
            if rule.pattern.is_match(&prompt) {
                return Some(BackendReply {
                    text: rule.reply.clone(),
                    prompt_tokens: rule.prompt_tokens,
                    output_tokens: rule.output_tokens,
                });
            }
        }
        self.default_reply.clone().map(BackendReply::text)
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, label: &str, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let reply = self
            .resolve(label, request)
            .ok_or_else(|| BackendError::Malformed(format!("no scripted reply for a \"{label}\" call")))?;
        self.invocations.fetch_add(1, Ordering::SeqCst);
        if self.record {
            self.log.lock().unwrap().push(LoggedCall {
                label: label.to_owned(),
                system_prompt: request.system_prompt.clone(),
                user_prompt: request.user_prompt.clone(),
                reply: reply.text.clone(),
            });
        }
        Ok(reply)
    }
}

/// Embeddings from an explicit text table, falling back to a hashed
/// bag-of-words vector so unscripted texts still embed deterministically.
#[derive(Debug)]
pub struct ScriptedEmbedder {
    model: String,
    dim: usize,
    table: HashMap<String, Vec<f32>>,
    backend_calls: AtomicU64,
    texts_embedded: AtomicU64,
}

impl ScriptedEmbedder {
    pub fn new(model: &str, dim: usize) -> Self {
        ScriptedEmbedder {
            model: model.to_owned(),
            dim: dim.max(1),
            table: HashMap::new(),
            backend_calls: AtomicU64::new(0),
            texts_embedded: AtomicU64::new(0),
        }
    }

    pub fn vector(mut self, text: &str, values: Vec<f32>) -> Self {
        self.table.insert(text.to_owned(), values);
        self
    }

    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> u64 {
        self.texts_embedded.load(Ordering::SeqCst)
    }

    fn hashed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        v[0] = 1e-3;
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
        {
            // FNV-1a
            let mut h: u64 = 0xcbf29ce484222325;
            for b in token.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            let slot = (h % self.dim as u64) as usize;
            v[slot] += if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        }
        v
    }
}

impl EmbedBackend for ScriptedEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        self.texts_embedded.fetch_add(texts.len() as u64, Ordering::SeqCst);
        Ok(texts
            .iter()
            .map(|t| self.table.get(t).cloned().unwrap_or_else(|| self.hashed(t)))
            .collect())
    }
}

/// On-disk description of a mock backend, used by `--backend mock --script`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub default_reply: Option<String>,
    #[serde(default)]
    pub embedding: Option<EmbeddingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    #[serde(default = "default_embed_model")]
    pub model: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub vectors: std::collections::BTreeMap<String, Vec<f32>>,
}

fn default_embed_model() -> String {
    "mock-embed".into()
}

fn default_dim() -> usize {
    64
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid mock script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid rule pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn chat_backend(&self) -> Result<ScriptedChat, ScriptError> {
        let mut chat = ScriptedChat::new();
        for r in &self.rules {
            let pattern = Regex::new(&r.pattern).map_err(|e| ScriptError::Pattern {
                pattern: r.pattern.clone(),
                message: e.to_string(),
            })?;
            chat.rules.push(Rule {
                label: r.label.clone(),
                pattern,
                reply: r.reply.clone(),
                prompt_tokens: r.prompt_tokens,
                output_tokens: r.output_tokens,
            });
        }
        chat.default_reply = self.default_reply.clone();
        Ok(chat)
    }

    pub fn embed_backend(&self) -> ScriptedEmbedder {
        let spec = self.embedding.clone().unwrap_or(EmbeddingSpec {
            model: default_embed_model(),
            dim: default_dim(),
            vectors: Default::default(),
        });
        let mut e = ScriptedEmbedder::new(&spec.model, spec.dim);
        e.table = spec.vectors.into_iter().collect();
        e
    }
}
