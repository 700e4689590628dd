use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::classify::{ClassificationOutcome, ClassificationStatus};
use super::keywords::KeywordTable;
use super::{BuildContext, BuildError, Phase};
use crate::gateway::{extract_json, ChatRequest, GatewayError};
use crate::prompts::{self, AXIS_RULES};
use crate::registry::Service;

/// Keyword lines shown to a designer at most.
const KEYWORD_PROMPT_LIMIT: usize = 400;
/// Problem services listed in a refine prompt, per kind.
const REFINE_LIST_LIMIT: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisTag {
    FunctionalDomain,
    OperationObject,
    OperationType,
    TechnicalApproach,
}

impl AxisTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            AxisTag::FunctionalDomain => "functional-domain",
            AxisTag::OperationObject => "operation-object",
            AxisTag::OperationType => "operation-type",
            AxisTag::TechnicalApproach => "technical-approach",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '_' || c == ' ' { '-' } else { c })
            .collect();
        match norm.as_str() {
            "functional-domain" | "domain" | "user-functional-domain" => Some(AxisTag::FunctionalDomain),
            "operation-object" | "object" => Some(AxisTag::OperationObject),
            "operation-type" | "operation" => Some(AxisTag::OperationType),
            "technical-approach" | "technology" | "technical" => Some(AxisTag::TechnicalApproach),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDraft {
    pub name: String,
    pub description: String,
    pub boundary: String,
    pub axis: AxisTag,
}

impl CategoryDraft {
    pub fn new(name: &str, description: &str, boundary: &str, axis: AxisTag) -> Self {
        CategoryDraft {
            name: name.to_owned(),
            description: description.to_owned(),
            boundary: boundary.to_owned(),
            axis,
        }
    }
}

/// What the designer sees about a node's services.
#[derive(Debug, Clone, Copy)]
pub enum DesignPayload<'a> {
    Keywords(&'a KeywordTable),
    Descriptions(&'a [&'a Service]),
}

impl DesignPayload<'_> {
    pub fn is_keywords(&self) -> bool {
        matches!(self, DesignPayload::Keywords(_))
    }

    pub(crate) fn render(&self) -> (&'static str, String) {
        match self {
            DesignPayload::Keywords(t) => ("Functional keywords with service counts", t.render(KEYWORD_PROMPT_LIMIT)),
            DesignPayload::Descriptions(s) => (
                "Services",
                prompts::numbered_services(s.iter().map(|s| (s.name.as_str(), s.description.as_str()))),
            ),
        }
    }
}

/// Where in the tree a design is happening.
#[derive(Debug, Clone, Default)]
pub struct ParentContext {
    /// Names from the first level down; empty at the root.
    pub path: Vec<String>,
    pub description: String,
    pub boundary: String,
}

impl ParentContext {
    pub fn path_label(&self) -> String {
        if self.path.is_empty() {
            "(root)".to_owned()
        } else {
            self.path.join(" > ")
        }
    }

    fn scope(&self) -> String {
        match (self.description.trim(), self.boundary.trim()) {
            ("", "") => "all services in the registry".to_owned(),
            (d, "") => d.to_owned(),
            (d, b) => format!("{d} ({b})"),
        }
    }
}

/// A reply that failed the draft contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DraftProblem {
    NoJson,
    TooFew(usize),
    MixedAxes(Vec<AxisTag>),
    MissingBoundary(Vec<String>),
}

impl DraftProblem {
    pub fn describe(&self) -> String {
        match self {
            DraftProblem::NoJson => "the reply was not valid JSON in the requested shape".into(),
            DraftProblem::TooFew(n) => format!("only {n} categories were given; at least 2 are required"),
            DraftProblem::MixedAxes(axes) => format!(
                "sibling categories mixed classification axes ({}); all siblings must share one axis",
                axes.iter().map(AxisTag::as_str).collect::<Vec<_>>().join(", ")
            ),
            DraftProblem::MissingBoundary(names) => {
                format!("categories without a NOT-here boundary clause: {}", names.join(", "))
            }
        }
    }
}

fn text_field(v: &Value, keys: &[&str]) -> String {
    keys.iter()
        .find_map(|k| v.get(*k).and_then(Value::as_str))
        .unwrap_or("")
        .trim()
        .to_owned()
}

/// Reads drafts from a design/refine reply. Categories without their own
/// axis inherit the top-level `axis`; without either they default to
/// functional-domain.
pub fn parse_drafts(text: &str) -> Result<Vec<CategoryDraft>, DraftProblem> {
    let value = extract_json(text).map_err(|_| DraftProblem::NoJson)?;
    let (top_axis, list) = match &value {
        Value::Array(items) => (None, items.clone()),
        Value::Object(_) => (
            value.get("axis").and_then(Value::as_str).and_then(AxisTag::parse),
            value
                .get("categories")
                .and_then(Value::as_array)
                .cloned()
                .ok_or(DraftProblem::NoJson)?,
        ),
        _ => return Err(DraftProblem::NoJson),
    };
    let drafts = list
        .iter()
        .filter_map(|c| {
            let name = text_field(c, &["name", "category"]);
            if name.is_empty() {
                return None;
            }
            let axis = c
                .get("axis")
                .and_then(Value::as_str)
                .and_then(AxisTag::parse)
                .or(top_axis)
                .unwrap_or(AxisTag::FunctionalDomain);
            Some(CategoryDraft {
                name,
                description: text_field(c, &["description", "desc"]),
                boundary: text_field(c, &["boundary", "boundary_clause", "not_here", "not"]),
                axis,
            })
        })
        .collect();
    Ok(drafts)
}

/// Checks the contract, truncating overlong lists (with a warning) first.
pub fn check_drafts(ctx: &BuildContext<'_>, mut drafts: Vec<CategoryDraft>) -> Result<Vec<CategoryDraft>, (DraftProblem, Vec<CategoryDraft>)> {
    let max = ctx.cfg.max_categories_size.max(2);
    if drafts.len() > max {
        ctx.warn(format!("designer proposed {} categories; keeping the first {max}", drafts.len()));
        drafts.truncate(max);
    }
    let mut seen = std::collections::HashSet::new();
    drafts.retain(|d| seen.insert(d.name.to_lowercase()));
    if drafts.len() < 2 {
        return Err((DraftProblem::TooFew(drafts.len()), drafts));
    }
    let mut axes: Vec<AxisTag> = drafts.iter().map(|d| d.axis).collect();
    axes.sort();
    axes.dedup();
    if axes.len() > 1 {
        return Err((DraftProblem::MixedAxes(axes), drafts));
    }
    let missing: Vec<String> = drafts
        .iter()
        .filter(|d| d.boundary.trim().is_empty())
        .map(|d| d.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err((DraftProblem::MissingBoundary(missing), drafts));
    }
    Ok(drafts)
}

/// Fills empty boundary clauses from sibling names.
fn synthesize_boundaries(drafts: &mut [CategoryDraft]) {
    let names: Vec<String> = drafts.iter().map(|d| d.name.clone()).collect();
    for d in drafts.iter_mut() {
        if d.boundary.trim().is_empty() {
            let others: Vec<&str> = names.iter().filter(|n| **n != d.name).map(String::as_str).collect();
            d.boundary = format!("NOT here: services that belong to {}", others.join(", "));
        }
    }
}

/// Maps an unparseable reply to a re-ask; transport failures end the build.
fn chat_text(ctx: &BuildContext<'_>, phase: Phase, request: &ChatRequest) -> Result<Option<String>, BuildError> {
    match ctx.chat(phase, request) {
        Ok(r) => Ok(Some(r.text)),
        Err(BuildError::Gateway(GatewayError::Malformed(_))) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One design call plus at most one re-ask naming the violated rule.
fn request_drafts(
    ctx: &BuildContext<'_>,
    phase: Phase,
    request: &ChatRequest,
) -> Result<Result<Vec<CategoryDraft>, DraftProblem>, BuildError> {
    let problem = match chat_text(ctx, phase, request)?.ok_or(DraftProblem::NoJson).and_then(|t| parse_drafts(&t)) {
        Ok(drafts) => match check_drafts(ctx, drafts) {
            Ok(d) => return Ok(Ok(d)),
            Err((p, _)) => p,
        },
        Err(p) => p,
    };
    ctx.warn(format!("design reply rejected ({}); asking again", problem.describe()));
    let mut retry = request.clone();
    retry.user_prompt.push_str(&format!(
        "\n\nYour previous answer was rejected: {}. Answer again following every rule.",
        problem.describe()
    ));
    let drafts = match chat_text(ctx, phase, &retry)?.ok_or(DraftProblem::NoJson).and_then(|t| parse_drafts(&t)) {
        Ok(d) => d,
        Err(p) => return Ok(Err(p)),
    };
    Ok(match check_drafts(ctx, drafts) {
        Ok(d) => Ok(d),
        Err((DraftProblem::MissingBoundary(_), mut d)) => {
            ctx.warn("boundary clauses still missing after re-ask; derived from sibling names".into());
            synthesize_boundaries(&mut d);
            Ok(d)
        }
        Err((p, _)) => Err(p),
    })
}

pub fn design_categories(
    ctx: &BuildContext<'_>,
    payload: DesignPayload<'_>,
    parent: &ParentContext,
) -> Result<Vec<CategoryDraft>, BuildError> {
    let (title, body) = payload.render();
    let max = ctx.cfg.max_categories_size.to_string();
    let path = parent.path_label();
    let scope = parent.scope();
    let (system, user) = prompts::DESIGN.render(&[
        ("axis_rules", AXIS_RULES),
        ("path", &path),
        ("scope", &scope),
        ("payload_title", title),
        ("payload", &body),
        ("max_categories", &max),
    ]);
    let request = ctx.gateway.request(system, user);
    request_drafts(ctx, Phase::Design, &request)?.map_err(|p| BuildError::Design {
        path,
        reason: p.describe(),
    })
}

fn render_drafts(drafts: &[CategoryDraft]) -> String {
    prompts::numbered_categories(
        drafts
            .iter()
            .map(|d| (d.name.as_str(), d.description.as_str(), d.boundary.as_str())),
    )
}

/// One audit call at the root: confirms coverage and axis, or applies a
/// single repair. Falls back to `drafts` unchanged if the repair is unusable.
pub fn validate_root(
    ctx: &BuildContext<'_>,
    drafts: Vec<CategoryDraft>,
    payload: DesignPayload<'_>,
) -> Result<Vec<CategoryDraft>, BuildError> {
    let (title, body) = payload.render();
    let listing = render_drafts(&drafts);
    let (system, user) = prompts::VALIDATE_ROOT.render(&[
        ("axis_rules", AXIS_RULES),
        ("categories", &listing),
        ("payload_title", title),
        ("payload", &body),
    ]);
    let resp = ctx.chat(Phase::Validate, &ctx.gateway.request(system, user))?;
    let Ok(value) = extract_json(&resp.text) else {
        ctx.warn("root audit reply unreadable; keeping the designed categories".into());
        return Ok(drafts);
    };
    let verdict = value.get("verdict").and_then(Value::as_str).unwrap_or("ok").to_ascii_lowercase();
    if verdict == "ok" {
        return Ok(drafts);
    }
    let axis = drafts[0].axis;
    let parse_list = |key: &str| -> Option<Vec<CategoryDraft>> {
        let list = value.get(key)?.as_array()?;
        let wrapped = serde_json::json!({ "axis": axis.as_str(), "categories": list }).to_string();
        parse_drafts(&wrapped).ok()
    };
    let repaired = if let Some(full) = parse_list("categories") {
        full
    } else if let Some(extra) = parse_list("add") {
        drafts.iter().cloned().chain(extra).collect()
    } else {
        ctx.warn("root audit asked for a repair but supplied none; keeping the designed categories".into());
        return Ok(drafts);
    };
    let before = repaired.len();
    match check_drafts(ctx, repaired) {
        Ok(r) if r.len() == before => Ok(r),
        Ok(_) | Err(_) => {
            ctx.warn("root repair violated the category rules; keeping the designed categories".into());
            Ok(drafts)
        }
    }
}

fn problem_lines(items: impl Iterator<Item = String>, total: usize) -> String {
    let mut lines: Vec<String> = items.take(REFINE_LIST_LIMIT).collect();
    if lines.is_empty() {
        return "(none)".into();
    }
    if total > REFINE_LIST_LIMIT {
        lines.push(format!("- ... and {} more", total - REFINE_LIST_LIMIT));
    }
    lines.join("\n")
}

/// One refine call. No re-ask: on any failure the caller keeps its drafts.
pub fn refine_node(
    ctx: &BuildContext<'_>,
    parent: &ParentContext,
    drafts: &[CategoryDraft],
    services: &[&Service],
    outcomes: &[ClassificationOutcome],
) -> Result<Vec<CategoryDraft>, BuildError> {
    let generic: Vec<(&Service, &ClassificationOutcome)> = services
        .iter()
        .zip(outcomes)
        .filter(|(_, o)| o.status == ClassificationStatus::Generic)
        .map(|(s, o)| (*s, o))
        .collect();
    let unmatched: Vec<&Service> = services
        .iter()
        .zip(outcomes)
        .filter(|(_, o)| o.status == ClassificationStatus::Unmatched)
        .map(|(s, _)| *s)
        .collect();
    let generic_text = problem_lines(
        generic.iter().map(|(s, o)| {
            let matched: Vec<&str> = o.matched.iter().map(|&i| drafts[i].name.as_str()).collect();
            format!("- {}: {} [matched: {}]", s.name, prompts::one_line(&s.description), matched.join(", "))
        }),
        generic.len(),
    );
    let unmatched_text = problem_lines(
        unmatched
            .iter()
            .map(|s| format!("- {}: {}", s.name, prompts::one_line(&s.description))),
        unmatched.len(),
    );
    let listing = render_drafts(drafts);
    let path = parent.path_label();
    let max = ctx.cfg.max_categories_size.to_string();
    let (system, user) = prompts::REFINE.render(&[
        ("axis_rules", AXIS_RULES),
        ("path", &path),
        ("categories", &listing),
        ("generic", &generic_text),
        ("unmatched", &unmatched_text),
        ("max_categories", &max),
    ]);
    let resp = ctx.chat(Phase::Refine, &ctx.gateway.request(system, user))?;
    let parsed = parse_drafts(&resp.text).map_err(|p| BuildError::Design {
        path: path.clone(),
        reason: p.describe(),
    })?;
    check_drafts(ctx, parsed)
        .or_else(|(p, mut d)| match p {
            DraftProblem::MissingBoundary(_) => {
                synthesize_boundaries(&mut d);
                Ok(d)
            }
            other => Err(other),
        })
        .map_err(|p| BuildError::Design {
            path,
            reason: p.describe(),
        })
}
