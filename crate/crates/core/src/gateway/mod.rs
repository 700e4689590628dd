//! Chat-completion and embedding access with retries and usage metering.
//!
//! Every LLM call in the crate goes through [`Gateway`]. Backends are pluggable:
//! [`mock::ScriptedChat`] answers from a script or an oracle closure and is what
//! the test-suite runs against; [`http`] talks to an OpenAI-compatible server.

mod cache;
#[cfg(feature = "http")]
pub mod http;
pub mod mock;
pub mod parse;

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::EmbeddingCache;
pub use parse::{estimate_tokens, extract_json, parse_index_list, IndexList, ParseError};

/// Suffix appended when re-asking after an unparseable index reply.
pub const STRICT_INDEX_SUFFIX: &str =
    "\n\nReply ONLY with comma-separated numbers from the list above (for example: 1, 3). Reply 0 if none apply.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f32,
    pub thinking_disabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

impl ChatRequest {
    /// Full prompt text as seen by the model, system part first.
    pub fn full_prompt(&self) -> String {
        format!("{}\n\n{}", self.system_prompt, self.user_prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

/// What a backend hands back. Missing usage is filled in by estimation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

impl BackendReply {
    pub fn text(text: impl Into<String>) -> Self {
        BackendReply {
            text: text.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Connection failures, timeouts, 5xx and 429. Retried.
    #[error("transport: {0}")]
    Transport(String),
    /// The server answered but the payload was unusable. Not retried.
    #[error("malformed reply: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("no embedding backend configured")]
    NoEmbedder,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, label: &str, request: &ChatRequest) -> Result<BackendReply, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn model(&self) -> &str;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

/// Calls and tokens spent by one logical operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCost {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

impl CallCost {
    pub fn of(response: &ChatResponse) -> Self {
        CallCost {
            calls: 1,
            prompt_tokens: response.prompt_tokens,
            output_tokens: response.output_tokens,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.output_tokens
    }
}

impl Add for CallCost {
    type Output = CallCost;
    fn add(self, o: CallCost) -> CallCost {
        CallCost {
            calls: self.calls + o.calls,
            prompt_tokens: self.prompt_tokens + o.prompt_tokens,
            output_tokens: self.output_tokens + o.output_tokens,
        }
    }
}

impl AddAssign for CallCost {
    fn add_assign(&mut self, o: CallCost) {
        *self = *self + o;
    }
}

impl std::iter::Sum for CallCost {
    fn sum<I: Iterator<Item = CallCost>>(iter: I) -> Self {
        iter.fold(CallCost::default(), Add::add)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub total_calls: u64,
    pub total_prompt_tokens: u64,
    pub total_output_tokens: u64,
    pub by_label: BTreeMap<String, CallCost>,
    pub embed_backend_calls: u64,
    pub embed_texts: u64,
    pub embed_cache_hits: u64,
}

/// Process-wide call and token counters, safe to share between workers.
#[derive(Debug, Default)]
pub struct UsageMeter {
    state: Mutex<UsageSnapshot>,
}

impl UsageMeter {
    pub fn record(&self, label: &str, cost: CallCost) {
        let mut s = self.state.lock().unwrap();
        s.total_calls += cost.calls;
        s.total_prompt_tokens += cost.prompt_tokens;
        s.total_output_tokens += cost.output_tokens;
        *s.by_label.entry(label.to_owned()).or_default() += cost;
    }

    fn record_embed(&self, backend_calls: u64, texts: u64, hits: u64) {
        let mut s = self.state.lock().unwrap();
        s.embed_backend_calls += backend_calls;
        s.embed_texts += texts;
        s.embed_cache_hits += hits;
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        self.state.lock().unwrap().clone()
    }

    pub fn total_calls(&self) -> u64 {
        self.state.lock().unwrap().total_calls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub chat_model: String,
    /// Total attempts per chat call on transport failure.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Substrings of model ids that get the thinking-disable flag.
    pub thinking_disabled_models: Vec<String>,
    pub max_output_tokens: Option<u32>,
    pub embed_batch_size: usize,
    pub embed_cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            chat_model: "deepseek-chat".into(),
            retries: 3,
            backoff_ms: 500,
            thinking_disabled_models: vec!["v4".into()],
            max_output_tokens: None,
            embed_batch_size: 64,
            embed_cache_dir: None,
        }
    }
}

/// How an index-selection call ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStatus {
    Parsed,
    /// First reply was unusable, the stricter re-ask succeeded.
    Reasked,
    /// Both replies were unusable; treated as an empty selection.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub list: IndexList,
    pub status: SelectionStatus,
    pub cost: CallCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model: String,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }
}

/// Scales `values` to unit length. Zero vectors are rejected.
pub fn l2_normalize(values: &mut [f32]) -> Result<(), GatewayError> {
    let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(GatewayError::Malformed("embedding has zero or non-finite norm".into()));
    }
    for v in values.iter_mut() {
        *v = (*v as f64 / norm) as f32;
    }
    Ok(())
}

pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embedder: Option<Arc<dyn EmbedBackend>>,
    cache: EmbeddingCache,
    meter: UsageMeter,
    cfg: GatewayConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatBackend>, cfg: GatewayConfig) -> Self {
        let cache = EmbeddingCache::new(cfg.embed_cache_dir.clone());
        Gateway {
            chat,
            embedder: None,
            cache,
            meter: UsageMeter::default(),
            cfg,
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn EmbedBackend>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn meter(&self) -> &UsageMeter {
        &self.meter
    }

    pub fn embed_model(&self) -> Option<&str> {
        self.embedder.as_deref().map(|e| e.model())
    }

    /// Builds a request with the configured model, temperature 0 and the thinking flag.
    pub fn request(&self, system: impl Into<String>, user: impl Into<String>) -> ChatRequest {
        let model = self.cfg.chat_model.clone();
        let lower = model.to_ascii_lowercase();
        let thinking_disabled = self
            .cfg
            .thinking_disabled_models
            .iter()
            .any(|p| !p.is_empty() && lower.contains(&p.to_ascii_lowercase()));
        ChatRequest {
            model,
            system_prompt: system.into(),
            user_prompt: user.into(),
            temperature: 0.0,
            thinking_disabled,
            max_output_tokens: self.cfg.max_output_tokens,
        }
    }

    pub fn chat(&self, request: &ChatRequest, label: &str) -> Result<ChatResponse, GatewayError> {
        if request.temperature != 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be 0".into()));
        }
        if request.system_prompt.trim().is_empty() || request.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompts must be non-empty".into()));
        }
        let attempts = self.cfg.retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 && self.cfg.backoff_ms > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.chat.complete(label, request) {
                Ok(reply) => {
                    let response = ChatResponse {
                        prompt_tokens: reply
                            .prompt_tokens
                            .unwrap_or_else(|| estimate_tokens(&request.full_prompt())),
                        output_tokens: reply.output_tokens.unwrap_or_else(|| estimate_tokens(&reply.text)),
                        text: reply.text,
                    };
                    self.meter.record(label, CallCost::of(&response));
                    return Ok(response);
                }
                Err(BackendError::Transport(msg)) => {
                    log::warn!("[{label}] transport failure (attempt {}/{attempts}): {msg}", attempt + 1);
                    last = msg;
                }
                Err(BackendError::Malformed(msg)) => return Err(GatewayError::Malformed(msg)),
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }

    /// Asks for a list of option indices.
    ///
    /// An unparseable reply gets exactly one re-ask with [`STRICT_INDEX_SUFFIX`];
    /// if that fails too the selection is empty with status `Failed`.
    pub fn select_indices(
        &self,
        label: &str,
        request: &ChatRequest,
        n_options: usize,
    ) -> Result<Selection, GatewayError> {
        let first = self.chat(request, label)?;
        let mut cost = CallCost::of(&first);
        if let Ok(list) = parse_index_list(&first.text, n_options) {
            return Ok(Selection {
                list,
                status: SelectionStatus::Parsed,
                cost,
            });
        }
        let mut strict = request.clone();
        strict.user_prompt.push_str(STRICT_INDEX_SUFFIX);
        let second = self.chat(&strict, label)?;
        cost += CallCost::of(&second);
        match parse_index_list(&second.text, n_options) {
            Ok(list) => Ok(Selection {
                list,
                status: SelectionStatus::Reasked,
                cost,
            }),
            Err(_) => {
                log::warn!("[{label}] unparseable index reply after re-ask; using empty selection");
                Ok(Selection {
                    list: IndexList::default(),
                    status: SelectionStatus::Failed,
                    cost,
                })
            }
        }
    }

    /// Embeds `texts`, one L2-normalized vector per input.
    ///
    /// Vectors are cached by (model, content hash); only cache misses reach the
    /// backend, deduplicated and split into `embed_batch_size` batches.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let embedder = self.embedder.as_ref().ok_or(GatewayError::NoEmbedder)?;
        let model = embedder.model().to_owned();

        let mut results: Vec<Option<Arc<Vec<f32>>>> = texts.iter().map(|t| self.cache.get(&model, t)).collect();
        let hits = results.iter().filter(|r| r.is_some()).count() as u64;

        let mut missing: Vec<&String> = Vec::new();
        for (t, r) in texts.iter().zip(&results) {
            if r.is_none() && !missing.contains(&t) {
                missing.push(t);
            }
        }

        let mut backend_calls = 0u64;
        let mut dim = results.iter().flatten().map(|v| v.len()).next();
        for batch in missing.chunks(self.cfg.embed_batch_size.max(1)) {
            let owned: Vec<String> = batch.iter().map(|s| (*s).clone()).collect();
            let vectors = self.embed_with_retry(embedder.as_ref(), &owned)?;
            backend_calls += 1;
            if vectors.len() != owned.len() {
                return Err(GatewayError::Malformed(format!(
                    "embedding backend returned {} vectors for {} inputs",
                    vectors.len(),
                    owned.len()
                )));
            }
            for (text, mut v) in owned.iter().zip(vectors) {
                match dim {
                    Some(d) if d != v.len() => {
                        return Err(GatewayError::DimensionMismatch {
                            expected: d,
                            got: v.len(),
                        })
                    }
                    _ => dim = Some(v.len()),
                }
                l2_normalize(&mut v)?;
                self.cache.put(&model, text, v);
            }
        }
        self.meter.record_embed(backend_calls, texts.len() as u64, hits);

        for (t, slot) in texts.iter().zip(results.iter_mut()) {
            if slot.is_none() {
                *slot = self.cache.get(&model, t);
            }
        }
        results
            .into_iter()
            .map(|v| {
                let values = v.ok_or_else(|| GatewayError::Malformed("embedding missing after fetch".into()))?;
                Ok(EmbeddingVector {
                    values: values.as_ref().clone(),
                    model: model.clone(),
                })
            })
            .collect()
    }

    fn embed_with_retry(&self, embedder: &dyn EmbedBackend, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let attempts = self.cfg.retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 && self.cfg.backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(10))));
            }
            match embedder.embed_batch(texts) {
                Ok(v) => return Ok(v),
                Err(BackendError::Transport(m)) => last = m,
                Err(BackendError::Malformed(m)) => return Err(GatewayError::Malformed(m)),
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{ScriptedChat, ScriptedEmbedder};
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn quick() -> GatewayConfig {
        GatewayConfig {
            backoff_ms: 0,
            ..Default::default()
        }
    }

    #[test]
    fn scripted_reply_and_metering() {
        let chat = ScriptedChat::new().rule_with_usage(None, ".*", "1,3", 11, 2);
        let gw = Gateway::new(Arc::new(chat), quick());
        let req = gw.request("pick", "options");
        let r = gw.chat(&req, "navigate").unwrap();
        assert_eq!(r.text, "1,3");
        assert_eq!((r.prompt_tokens, r.output_tokens), (11, 2));
        let snap = gw.meter().snapshot();
        assert_eq!(snap.total_calls, 1);
        assert_eq!(snap.by_label["navigate"].calls, 1);
        gw.chat(&req, "select").unwrap();
        assert_eq!(gw.meter().total_calls(), 2);
        let snap = gw.meter().snapshot();
        let sum: u64 = snap.by_label.values().map(|c| c.calls).sum();
        assert_eq!(sum, snap.total_calls);
    }

    struct Down(AtomicU32);
    impl ChatBackend for Down {
        fn complete(&self, _: &str, _: &ChatRequest) -> Result<BackendReply, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Transport("connection refused".into()))
        }
    }

    #[test]
    fn transport_error_after_retries() {
        let down = Arc::new(Down(AtomicU32::new(0)));
        let gw = Gateway::new(down.clone(), quick());
        let err = gw.chat(&gw.request("s", "u"), "x").unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert_eq!(down.0.load(Ordering::SeqCst), 3);
        assert_eq!(gw.meter().total_calls(), 0);
    }

    #[test]
    fn temperature_is_pinned() {
        let gw = Gateway::new(Arc::new(ScriptedChat::new().default_reply("1")), quick());
        let mut req = gw.request("s", "u");
        assert_eq!(req.temperature, 0.0);
        req.temperature = 0.7;
        assert!(matches!(gw.chat(&req, "x"), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn thinking_flag_follows_model_pattern() {
        let mut cfg = quick();
        cfg.chat_model = "deepseek-v4-flash".into();
        let gw = Gateway::new(Arc::new(ScriptedChat::new()), cfg);
        assert!(gw.request("s", "u").thinking_disabled);
        let gw = Gateway::new(Arc::new(ScriptedChat::new()), quick());
        assert!(!gw.request("s", "u").thinking_disabled);
    }

    #[test]
    fn select_reasks_once_then_empties() {
        let chat = ScriptedChat::new().default_reply("I am not sure");
        let gw = Gateway::new(Arc::new(chat), quick());
        let sel = gw.select_indices("navigate", &gw.request("s", "u"), 4).unwrap();
        assert_eq!(sel.status, SelectionStatus::Failed);
        assert!(sel.list.is_empty());
        assert_eq!(sel.cost.calls, 2);

        let chat = ScriptedChat::new()
            .rule(None, "comma-separated numbers", "2")
            .default_reply("hmm");
        let gw = Gateway::new(Arc::new(chat), quick());
        let sel = gw.select_indices("navigate", &gw.request("s", "u"), 4).unwrap();
        assert_eq!(sel.status, SelectionStatus::Reasked);
        assert_eq!(sel.list.indices, vec![2]);
    }

    #[test]
    fn embed_normalizes_and_caches() {
        let emb = Arc::new(ScriptedEmbedder::new("m", 2).vector("a", vec![3.0, 4.0]));
        let gw = Gateway::new(Arc::new(ScriptedChat::new()), quick()).with_embedder(emb.clone());
        let v = gw.embed(&["a".to_string(), "a".to_string()]).unwrap();
        assert_eq!(v.len(), 2);
        assert!((v[0].values[0] - 0.6).abs() < 1e-6 && (v[0].values[1] - 0.8).abs() < 1e-6);
        assert_eq!(emb.backend_calls(), 1);
        gw.embed(&["a".to_string()]).unwrap();
        assert_eq!(emb.backend_calls(), 1);
        assert_eq!(gw.meter().snapshot().embed_cache_hits, 1);
        assert!(gw.embed(&[]).unwrap().is_empty());
        assert_eq!(emb.backend_calls(), 1);
    }

    #[test]
    fn embed_dimension_mismatch() {
        let emb = ScriptedEmbedder::new("m", 2)
            .vector("a", vec![1.0, 0.0])
            .vector("b", vec![1.0, 0.0, 0.0]);
        let gw = Gateway::new(Arc::new(ScriptedChat::new()), quick()).with_embedder(Arc::new(emb));
        let err = gw.embed(&["a".into(), "b".into()]).unwrap_err();
        assert!(matches!(err, GatewayError::DimensionMismatch { expected: 2, got: 3 }));
    }
}
