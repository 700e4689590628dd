//! Tolerant parsing of LLM replies.

use regex::Regex;
use serde_json::Value;
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("reply contains no indices")]
    NoIndices,
    #[error("reply contains no JSON value")]
    NoJson,
}

/// 1-based indices parsed from a reply, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexList {
    pub indices: Vec<usize>,
    /// Numbers outside `1..=n_options` (including the conventional `0` for "none").
    pub dropped: usize,
}

impl IndexList {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    /// Zero-based positions, same order as `indices`.
    pub fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|i| i - 1)
    }
}

fn digits() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

/// Extracts every integer in `text`, keeping those in `1..=n_options`.
///
/// Whitespace, brackets and surrounding prose are ignored. A reply with no
/// digits at all is an error so the caller can re-ask.
pub fn parse_index_list(text: &str, n_options: usize) -> Result<IndexList, ParseError> {
    let mut out = IndexList::default();
    let mut found = false;
    for m in digits().find_iter(text) {
        found = true;
        match m.as_str().parse::<usize>() {
            Ok(i) if (1..=n_options).contains(&i) => {
                if !out.indices.contains(&i) {
                    out.indices.push(i);
                }
            }
            _ => out.dropped += 1,
        }
    }
    if !found {
        return Err(ParseError::NoIndices);
    }
    Ok(out)
}

/// Finds the first JSON object or array in a reply.
///
/// Accepts bare JSON, fenced code blocks and JSON embedded in prose.
pub fn extract_json(text: &str) -> Result<Value, ParseError> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if v.is_object() || v.is_array() {
            return Ok(v);
        }
    }
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let fence = FENCE.get_or_init(|| Regex::new(r"(?s)```(?:json|JSON)?\s*(.*?)```").unwrap());
    for cap in fence.captures_iter(trimmed) {
        if let Ok(v) = serde_json::from_str::<Value>(cap[1].trim()) {
            return Ok(v);
        }
    }
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let (Some(start), Some(end)) = (trimmed.find(open), trimmed.rfind(close)) {
            if start < end {
                if let Ok(v) = serde_json::from_str::<Value>(&trimmed[start..=end]) {
                    return Ok(v);
                }
            }
        }
    }
    Err(ParseError::NoJson)
}

/// Approximate token count: characters / 4, rounded up.
///
/// Only used when a backend reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
