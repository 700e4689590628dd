//! Prompt templates, one versioned file per call site under `prompts/`.
//!
//! A template file holds the system prompt, a `---- user ----` separator line
//! and the user prompt. Placeholders are written `{{name}}`.

pub const PROMPT_VERSION: u32 = 1;

const SEPARATOR: &str = "\n---- user ----\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    source: &'static str,
}

macro_rules! template {
    ($ident:ident, $name:literal) => {
        pub const $ident: Template = Template {
            name: $name,
            source: include_str!(concat!("../prompts/", $name, ".v1.txt")),
        };
    };
}

template!(KEYWORD, "keyword");
template!(DESIGN, "design");
template!(VALIDATE_ROOT, "validate_root");
template!(CLASSIFY, "classify");
template!(REFINE, "refine");
template!(PLACEMENT, "placement");
template!(CROSS_DOMAIN, "cross_domain");
template!(NAVIGATE, "navigate");
template!(SELECT, "select");
template!(ONESHOT_DESIGN, "oneshot_design");
template!(ONESHOT_CLASSIFY, "oneshot_classify");
template!(ONESHOT_REFINE, "oneshot_refine");
template!(PURE_LLM, "pure_llm");
template!(REWRITE, "rewrite");

/// Single-axis preference chain and boundary-clause requirement.
pub const AXIS_RULES: &str = include_str!("../prompts/axis_rules.v1.txt");

impl Template {
    fn parts(&self) -> (&'static str, &'static str) {
        self.source
            .split_once(SEPARATOR)
            .unwrap_or_else(|| panic!("prompt template {} lacks a user section", self.name))
    }

    /// Fills placeholders and returns `(system, user)`.
    pub fn render(&self, vars: &[(&str, &str)]) -> (String, String) {
        let (system, user) = self.parts();
        (fill(system, vars), fill(user, vars))
    }
}

fn fill(text: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(text.len() + 256);
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(key);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_owned()
}

/// `1. name: description (NOT: boundary)` lines.
pub fn numbered_categories<'a>(items: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> String {
    items
        .into_iter()
        .enumerate()
        .map(|(i, (name, description, boundary))| {
            let mut line = format!("{}. {}", i + 1, name);
            if !description.trim().is_empty() {
                line.push_str(": ");
                line.push_str(description.trim());
            }
            let b = boundary.trim();
            if !b.is_empty() {
                let b = b
                    .strip_prefix("NOT here:")
                    .or_else(|| b.strip_prefix("NOT:"))
                    .unwrap_or(b)
                    .trim();
                line.push_str(&format!(" (NOT: {b})"));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `1. name: description` lines.
pub fn numbered_services<'a>(items: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    items
        .into_iter()
        .enumerate()
        .map(|(i, (name, description))| format!("{}. {}: {}", i + 1, name, one_line(description)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Collapses internal newlines so one service always occupies one prompt line.
pub fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Counts enumerated option lines (`<n>. ...`) in a prompt.
pub fn count_enumerated(prompt: &str) -> usize {
    prompt
        .lines()
        .filter(|l| {
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            digits > 0 && l[digits..].starts_with(". ")
        })
        .count()
}
