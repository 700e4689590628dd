use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BuildContext, BuildError, Phase};
use crate::prompts;
use crate::registry::Service;

pub const MAX_KEYWORDS_PER_SERVICE: usize = 5;

/// Keywords with the number of services that mention them, most frequent first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub entries: Vec<(String, usize)>,
}

impl KeywordTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tallies per-service keyword lists. Keywords are case-folded and
    /// counted once per service; equal counts keep first-appearance order.
    pub fn from_lists<'a>(lists: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut counts: IndexMap<String, usize> = IndexMap::new();
        for list in lists {
            let mut seen = Vec::new();
            for k in list {
                let k = normalize(k);
                if k.is_empty() || seen.contains(&k) {
                    continue;
                }
                seen.push(k.clone());
                *counts.entry(k).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
        entries.sort_by_key(|e| std::cmp::Reverse(e.1));
        KeywordTable { entries }
    }

    /// `keyword (count)` lines, capped at `limit` entries.
    pub fn render(&self, limit: usize) -> String {
        let mut lines: Vec<String> = self
            .entries
            .iter()
            .take(limit)
            .map(|(k, n)| format!("- {k} ({n})"))
            .collect();
        if self.entries.len() > limit {
            lines.push(format!("- ... and {} rarer keywords", self.entries.len() - limit));
        }
        lines.join("\n")
    }
}

fn normalize(k: &str) -> String {
    k.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '.' || c == '*')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[-*]?\s*\[?(\d+)\]?\s*[:.)\-]\s*(.*)$").unwrap())
}

/// Parses `<n>: kw, kw` lines for a batch of `batch_len` services.
/// Returns `None` when not a single line could be read.
pub fn parse_keyword_reply(text: &str, batch_len: usize) -> Option<Vec<Vec<String>>> {
    let mut out = vec![Vec::new(); batch_len];
    let mut any = false;
    for line in text.lines() {
        let Some(cap) = line_re().captures(line) else { continue };
        let Ok(i) = cap[1].parse::<usize>() else { continue };
        if !(1..=batch_len).contains(&i) {
            continue;
        }
        any = true;
        let slot = &mut out[i - 1];
        for k in cap[2].split([',', ';']) {
            let k = normalize(k);
            if !k.is_empty() && !slot.contains(&k) && slot.len() < MAX_KEYWORDS_PER_SERVICE {
                slot.push(k);
            }
        }
    }
    any.then_some(out)
}

/// Batched keyword extraction over `services`; one chat call per batch.
pub fn extract_keywords(ctx: &BuildContext<'_>, services: &[&Service]) -> Result<KeywordTable, BuildError> {
    if services.is_empty() {
        return Err(BuildError::EmptyInput("keyword extraction needs at least one service".into()));
    }
    let batches: Vec<&[&Service]> = services.chunks(ctx.cfg.keyword_batch_size.max(1)).collect();
    let results = ctx.pool.map(&batches, |batch| -> Result<Option<Vec<Vec<String>>>, BuildError> {
        let listing = prompts::numbered_services(batch.iter().map(|s| (s.name.as_str(), s.description.as_str())));
        let (system, user) = prompts::KEYWORD.render(&[("services", &listing)]);
        let req = ctx.gateway.request(system, user);
        let resp = ctx.chat(Phase::Keyword, &req)?;
        Ok(parse_keyword_reply(&resp.text, batch.len()))
    });

    let mut lists: Vec<Vec<String>> = Vec::with_capacity(services.len());
    let mut failed = 0usize;
    for r in results {
        match r? {
            Some(batch) => lists.extend(batch),
            None => {
                failed += 1;
                ctx.warn("keyword batch reply could not be parsed; batch skipped".to_string());
            }
        }
    }
    if failed == batches.len() {
        return Err(BuildError::KeywordsFailed);
    }
    Ok(KeywordTable::from_lists(lists.iter().map(Vec::as_slice)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_caps_and_dedups() {
        let r = parse_keyword_reply("1: a, b, c, d, e, f\n2: Maps; maps, routing\nnoise\n9: out of range", 2).unwrap();
        assert_eq!(r[0], ["a", "b", "c", "d", "e"]);
        assert_eq!(r[1], ["maps", "routing"]);
        assert!(parse_keyword_reply("no lines here", 2).is_none());
    }

    #[test]
    fn table_is_case_insensitive_and_sorted() {
        let lists = [
            vec!["Maps".to_string(), "travel".to_string()],
            vec!["maps".to_string()],
            vec!["Travel".into(), "travel".into(), "aaa".into()],
        ];
        let t = KeywordTable::from_lists(lists.iter().map(Vec::as_slice));
        assert_eq!(
            t.entries,
            vec![("maps".into(), 2), ("travel".into(), 2), ("aaa".into(), 1)]
        );
        let t = KeywordTable::from_lists([vec!["zeta".to_string()], vec!["alpha".to_string()]].iter().map(Vec::as_slice));
        assert_eq!(
            t.entries,
            vec![("zeta".into(), 1), ("alpha".into(), 1)]
        );
        assert!(t.render(1).contains("and 1 rarer"));
    }
}
