//! Run configuration: defaults, then a JSON file, then `TAXOSEEK_*`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use taxoseek::baselines::DatasetShape;
use taxoseek::builder::{BuildConfig, OneShotVariant};
use taxoseek::gateway::GatewayConfig;
use taxoseek::registry::{FieldMap, FileFormat, QueryFieldMap};
use taxoseek::search::SearchConfig;

use crate::failure::{Category, Failure};

/// The only place an API key may come from.
pub const API_KEY_VAR: &str = "TAXOSEEK_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    PureLlm,
    Embed,
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub base_url: String,
    /// Defaults to `base_url`.
    pub embed_base_url: Option<String>,
    pub embed_model: String,
    pub script: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            kind: BackendKind::Http,
            base_url: "https://api.deepseek.com/v1".into(),
            embed_base_url: None,
            embed_model: "text-embedding-3-small".into(),
            script: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    pub registry: Option<PathBuf>,
    /// Guessed from the extension when absent.
    pub registry_format: Option<FileFormat>,
    pub fields: FieldMap,
    pub queries: Option<PathBuf>,
    pub query_fields: QueryFieldMap,
    /// Free-text queries for `search`.
    pub query_texts: Vec<String>,
    pub taxonomy_dir: Option<PathBuf>,
    /// Label written into summaries; defaults to the queries file stem.
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub method: BaselineMethod,
    pub shape: DatasetShape,
    /// Defaults to the shape's K.
    pub k: Option<usize>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            method: BaselineMethod::PureLlm,
            shape: DatasetShape::ToolRet,
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub workers: usize,
    pub keep_traces: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            workers: 20,
            keep_traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    /// Derived from a hash of the rest of the config when absent.
    pub run_id: Option<String>,
    pub results_dir: PathBuf,
    pub log_level: String,
    pub data: DataSettings,
    pub backend: BackendSettings,
    pub gateway: GatewayConfig,
    pub build: BuildConfig,
    pub oneshot_variant: OneShotVariant,
    pub search: SearchConfig,
    pub baseline: BaselineSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            run_id: None,
            results_dir: "results".into(),
            log_level: "warn".into(),
            data: DataSettings::default(),
            backend: BackendSettings::default(),
            gateway: GatewayConfig::default(),
            build: BuildConfig::default(),
            oneshot_variant: OneShotVariant::Base,
            search: SearchConfig::default(),
            baseline: BaselineSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn run_dir(&self) -> PathBuf {
        self.results_dir.join(self.run_id.as_deref().unwrap_or("unnamed"))
    }

    pub fn registry_path(&self) -> Result<&Path> {
        required(&self.data.registry, "--registry")
    }

    pub fn queries_path(&self) -> Result<&Path> {
        required(&self.data.queries, "--queries")
    }

    pub fn taxonomy_dir(&self) -> Result<&Path> {
        required(&self.data.taxonomy_dir, "--taxonomy-dir")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Failure::new(Category::Usage, format!("missing required path {flag}")).into())
}

/// Sets `value` at a `/`-separated path, creating objects on the way.
pub fn set(root: &mut Value, path: &str, value: Value) {
    let mut cur = root;
    let mut keys = path.split('/').filter(|k| !k.is_empty()).peekable();
    while let Some(k) = keys.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("just made an object");
        if keys.peek().is_none() {
            obj.insert(k.to_owned(), value);
            return;
        }
        cur = obj.entry(k.to_owned()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Recursive object merge; anything else in `patch` replaces `base`.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn contains_key(v: &Value, key: &str) -> bool {
    match v {
        Value::Object(m) => m.iter().any(|(k, v)| k == key || contains_key(v, key)),
        Value::Array(a) => a.iter().any(|v| contains_key(v, key)),
        _ => false,
    }
}

enum EnvKind {
    Text,
    Number,
}

const ENV_VARS: [(&str, &[&str], EnvKind); 10] = [
    ("TAXOSEEK_BACKEND", &["backend/kind"], EnvKind::Text),
    ("TAXOSEEK_BASE_URL", &["backend/base_url"], EnvKind::Text),
    ("TAXOSEEK_EMBED_BASE_URL", &["backend/embed_base_url"], EnvKind::Text),
    ("TAXOSEEK_EMBED_MODEL", &["backend/embed_model"], EnvKind::Text),
    ("TAXOSEEK_SCRIPT", &["backend/script"], EnvKind::Text),
    ("TAXOSEEK_CHAT_MODEL", &["gateway/chat_model"], EnvKind::Text),
    ("TAXOSEEK_RETRIES", &["gateway/retries"], EnvKind::Number),
    ("TAXOSEEK_EMBED_CACHE", &["gateway/embed_cache_dir"], EnvKind::Text),
    ("TAXOSEEK_RESULTS_DIR", &["results_dir"], EnvKind::Text),
    ("TAXOSEEK_WORKERS", &["build/workers", "search/workers", "eval/workers"], EnvKind::Number),
];

fn env_patch(lookup: &dyn Fn(&str) -> Option<String>) -> Result<Value> {
    let mut patch = Value::Object(Map::new());
    for (var, paths, kind) in ENV_VARS {
        let Some(raw) = lookup(var) else { continue };
        let value = match kind {
            EnvKind::Text => Value::String(raw),
            EnvKind::Number => {
                let n: u64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| Failure::new(Category::Config, format!("{var}={raw} is not a whole number")))?;
                Value::from(n)
            }
        };
        for p in paths {
            set(&mut patch, p, value.clone());
        }
    }
    Ok(patch)
}

fn short_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

/// Layers `file`, the environment and `flags` over the defaults.
pub fn resolve(
    command: &str,
    file: Option<&Path>,
    flags: Value,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))
            .map_err(|e| Failure::wrap(Category::Config, e))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::new(Category::Config, format!("{}: {e}", path.display())))?;
        if contains_key(&parsed, "api_key") {
            bail!(Failure::new(
                Category::Config,
                format!("{}: API keys are read from {API_KEY_VAR} only", path.display())
            ));
        }
        merge(&mut value, parsed);
    }
    merge(&mut value, env_patch(lookup)?);
    merge(&mut value, flags);
    set(&mut value, "command", Value::String(command.to_owned()));
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Failure::new(Category::Config, format!("invalid configuration: {e}")))?;

    if cfg.data.dataset.is_none() {
        cfg.data.dataset = cfg
            .data
            .queries
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned());
    }
    if cfg.data.registry_format.is_none() {
        cfg.data.registry_format = cfg.data.registry.as_deref().map(FileFormat::from_path);
    }
    if cfg.baseline.k.is_none() {
        cfg.baseline.k = Some(cfg.baseline.shape.default_k());
    }
    if cfg.run_id.is_none() {
        cfg.run_id = Some(format!("{command}-{}", short_hash(&cfg.to_json())));
    }
    Ok(cfg)
}
