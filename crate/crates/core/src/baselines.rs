//! Comparison retrievers: the whole registry in one prompt, dense top-K, and
//! query rewriting followed by dense top-K.

use std::collections::HashSet;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{extract_json, CallCost, Gateway, GatewayError};
use crate::prompts;
use crate::registry::{Registry, Service};

pub const PURE_LLM_LABEL: &str = "pure_llm";
pub const REWRITE_LABEL: &str = "rewrite";

/// Dataset families with different default K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetShape {
    ToolRet,
    PublicMcp,
}

impl DatasetShape {
    pub fn default_k(&self) -> usize {
        match self {
            DatasetShape::ToolRet => 5,
            DatasetShape::PublicMcp => 10,
        }
    }
}

impl FromStr for DatasetShape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "toolret" => Ok(DatasetShape::ToolRet),
            "publicmcp" | "mcp" => Ok(DatasetShape::PublicMcp),
            other => Err(format!("unknown dataset shape \"{other}\" (expected toolret or public-mcp)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding index is empty")]
    EmptyIndex,
    #[error("embedding model mismatch: index built with {index}, query embedded with {query}")]
    ModelMismatch { index: String, query: String },
}

/// Ids chosen by a baseline plus what it cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub service_ids: Vec<String>,
    pub cost: CallCost,
    /// Reply tokens that named no registry service.
    pub unknown_ids: usize,
    /// Rewrite only: the raw query was embedded because no tool line was found.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<RewriteExtraction>,
}

fn catalog_line(s: &Service) -> String {
    format!("{} | {}: {}", s.id, s.name, prompts::one_line(&s.description))
}

/// Registry ids named in a reply, first appearance order, plus the count of
/// tokens that matched nothing.
pub fn parse_id_list(text: &str, registry: &Registry) -> (Vec<String>, usize) {
    let tokens: Vec<String> = match extract_json(text) {
        Ok(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        _ => text.split([',', '\n', ';']).map(str::to_owned).collect(),
    };
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    let mut unknown = 0;
    for t in tokens {
        let t = t
            .trim()
            .trim_start_matches(['-', '*', '['])
            .trim_end_matches([']', '.'])
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '`')
            .trim();
        if t.is_empty() || t.eq_ignore_ascii_case("none") {
            continue;
        }
        let resolved = if registry.contains(t) {
            Some(t)
        } else {
            t.split_once(" | ").map(|(id, _)| id.trim()).filter(|id| registry.contains(id))
        };
        match resolved {
            Some(id) => {
                if seen.insert(id.to_owned()) {
                    ids.push(id.to_owned());
                }
            }
            None => unknown += 1,
        }
    }
    (ids, unknown)
}

/// Exactly one chat call carrying the whole catalog.
pub fn pure_llm_retrieve(gateway: &Gateway, registry: &Registry, query: &str) -> Result<BaselineResult, BaselineError> {
    let catalog = registry.iter().map(catalog_line).collect::<Vec<_>>().join("\n");
    let (system, user) = prompts::PURE_LLM.render(&[("catalog", &catalog), ("query", query)]);
    let resp = gateway.chat(&gateway.request(system, user), PURE_LLM_LABEL)?;
    let (ids, unknown) = parse_id_list(&resp.text, registry);
    if unknown > 0 {
        log::warn!("full-context reply named {unknown} ids not in the registry; dropped");
    }
    Ok(BaselineResult {
        service_ids: ids,
        cost: CallCost::of(&resp),
        unknown_ids: unknown,
        fallback: false,
        rewrite: None,
    })
}

/// Unit-norm service vectors in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
    pub model: String,
}

/// Text embedded for a service.
pub fn service_text(s: &Service) -> String {
    format!("{}: {}", s.name, prompts::one_line(&s.description))
}

pub fn build_embedding_index(gateway: &Gateway, registry: &Registry) -> Result<EmbeddingIndex, BaselineError> {
    let texts: Vec<String> = registry.iter().map(service_text).collect();
    let vectors = gateway.embed(&texts)?;
    let model = gateway.embed_model().unwrap_or_default().to_owned();
    Ok(EmbeddingIndex {
        ids: registry.ids().map(str::to_owned).collect(),
        vectors: vectors.into_iter().map(|v| v.values).collect(),
        model,
    })
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids by descending cosine similarity to a unit `query`; ties keep
    /// registry order. `k` above the index size returns everything.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<(String, f32)>, BaselineError> {
        if k == 0 {
            return Err(BaselineError::ZeroK);
        }
        if self.is_empty() {
            return Err(BaselineError::EmptyIndex);
        }
        if let Some(v) = self.vectors.first() {
            if v.len() != query.len() {
                return Err(GatewayError::DimensionMismatch {
                    expected: v.len(),
                    got: query.len(),
                }
                .into());
            }
        }
        if k > self.len() {
            log::warn!("k = {k} exceeds the index size {}; returning every service", self.len());
        }
        // Adding +0.0 folds -0.0 into +0.0 so total_cmp treats them as a tie.
        let mut scored: Vec<(usize, f32)> = self.vectors.iter().map(|v| dot(v, query) + 0.0).enumerate().collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }
}

fn embed_one(gateway: &Gateway, index: &EmbeddingIndex, text: &str) -> Result<Vec<f32>, BaselineError> {
    let v = gateway.embed(&[text.to_owned()])?.pop().expect("one vector per input");
    if v.model != index.model {
        return Err(BaselineError::ModelMismatch {
            index: index.model.clone(),
            query: v.model,
        });
    }
    Ok(v.values)
}

pub fn topk_retrieve(gateway: &Gateway, index: &EmbeddingIndex, query: &str, k: usize) -> Result<BaselineResult, BaselineError> {
    let q = embed_one(gateway, index, query)?;
    Ok(BaselineResult {
        service_ids: index.top_k(&q, k)?.into_iter().map(|(id, _)| id).collect(),
        cost: CallCost::default(),
        unknown_ids: 0,
        fallback: false,
        rewrite: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteExtraction {
    pub server_hint: String,
    pub tool_description: String,
}

fn block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<tool_assistant>(.*?)(?:</tool_assistant>|$)").unwrap())
}

fn field(block: &str, key: &str) -> String {
    block
        .lines()
        .find_map(|l| {
            let l = l.trim();
            let (k, v) = l.split_once(':')?;
            k.trim().eq_ignore_ascii_case(key).then(|| v.trim())
        })
        .unwrap_or("")
        .trim_matches(|c: char| c == '[' || c == ']' || c.is_whitespace())
        .to_owned()
}

/// Reads the `<tool_assistant>` block; `None` without a non-empty `tool:` line.
pub fn parse_tool_assistant(text: &str) -> Option<RewriteExtraction> {
    let block = block_re().captures(text)?.get(1)?.as_str();
    let tool = field(block, "tool");
    (!tool.is_empty()).then(|| RewriteExtraction {
        server_hint: field(block, "server"),
        tool_description: tool,
    })
}

/// One chat call to describe the needed tool, then top-K on that description.
pub fn rewrite_retrieve(gateway: &Gateway, index: &EmbeddingIndex, query: &str, k: usize) -> Result<BaselineResult, BaselineError> {
    let (system, user) = prompts::REWRITE.render(&[("query", query)]);
    let resp = gateway.chat(&gateway.request(system, user), REWRITE_LABEL)?;
    let extraction = parse_tool_assistant(&resp.text);
    let text = match &extraction {
        Some(e) => e.tool_description.clone(),
        None => {
            log::warn!("rewrite reply had no usable tool line; embedding the raw query");
            query.to_owned()
        }
    };
    let q = embed_one(gateway, index, &text)?;
    Ok(BaselineResult {
        service_ids: index.top_k(&q, k)?.into_iter().map(|(id, _)| id).collect(),
        cost: CallCost::of(&resp),
        unknown_ids: 0,
        fallback: extraction.is_none(),
        rewrite: extraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> Registry {
        Registry::new(vec![
            Service::new("a", "Alpha", "first"),
            Service::new("b-2", "Beta", "second"),
            Service::new("c", "Gamma", "third"),
        ])
        .unwrap()
    }

    #[test]
    fn id_lists() {
        let r = registry();
        assert_eq!(parse_id_list("a, b-2, zzz", &r), (vec!["a".into(), "b-2".into()], 1));
        assert_eq!(parse_id_list("[\"c\", \"a\", \"c\"]", &r), (vec!["c".into(), "a".into()], 0));
        assert_eq!(parse_id_list("- `b-2`\n- c | Gamma: third", &r).0, vec!["b-2", "c"]);
        assert_eq!(parse_id_list("none", &r), (vec![], 0));
    }

    #[test]
    fn tool_block() {
        let e = parse_tool_assistant(
            "Sure.\n<tool_assistant>\nserver: [Finance]\ntool: [currency conversion API]\n</tool_assistant>",
        )
        .unwrap();
        assert_eq!(e.server_hint, "Finance");
        assert_eq!(e.tool_description, "currency conversion API");
        assert!(parse_tool_assistant("<tool_assistant>\nserver: Maps\n</tool_assistant>").is_none());
        assert!(parse_tool_assistant("just prose").is_none());
    }

    #[test]
    fn ties_keep_registry_order() {
        let idx = EmbeddingIndex {
            ids: vec!["x".into(), "y".into(), "z".into()],
            vectors: vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]],
            model: "m".into(),
        };
        let ids: Vec<String> = idx.top_k(&[1.0, 0.0], 2).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(ids, ["y", "z"]);
        assert_eq!(idx.top_k(&[1.0, 0.0], 10).unwrap().len(), 3);
        assert!(matches!(idx.top_k(&[1.0, 0.0], 0), Err(BaselineError::ZeroK)));
    }

    #[test]
    fn dataset_shapes() {
        assert_eq!("toolret".parse::<DatasetShape>().unwrap().default_k(), 5);
        assert_eq!("public-mcp".parse::<DatasetShape>().unwrap().default_k(), 10);
    }
}
