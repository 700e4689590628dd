//! Single-pass baseline: one call designs the whole tree, then every service
//! is classified into a leaf path. Variants add keyword payloads, whole-tree
//! refinement and the axis rules, each on top of the previous.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::classify::service_line;
use super::design::DesignPayload;
use super::keywords::extract_keywords;
use super::{tolerate_transport, BuildConfig, BuildContext, BuildError, BuildReport, Phase, ROOT_NAME};
use crate::gateway::{extract_json, Gateway};
use crate::prompts::{self, AXIS_RULES};
use crate::registry::{Registry, Service};
use crate::taxonomy::Taxonomy;

const MAX_LEVELS: usize = 3;
const FAILURE_LIST_LIMIT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneShotVariant {
    Base,
    Freq,
    Refine,
    Axis,
}

impl OneShotVariant {
    pub const ALL: [OneShotVariant; 4] = [
        OneShotVariant::Base,
        OneShotVariant::Freq,
        OneShotVariant::Refine,
        OneShotVariant::Axis,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OneShotVariant::Base => "base",
            OneShotVariant::Freq => "freq",
            OneShotVariant::Refine => "refine",
            OneShotVariant::Axis => "axis",
        }
    }

    pub fn uses_keywords(&self) -> bool {
        *self >= OneShotVariant::Freq
    }

    pub fn refines(&self) -> bool {
        *self >= OneShotVariant::Refine
    }

    pub fn uses_axis_rules(&self) -> bool {
        *self >= OneShotVariant::Axis
    }
}

impl FromStr for OneShotVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().trim_start_matches('+').to_ascii_lowercase().as_str() {
            "base" => Ok(OneShotVariant::Base),
            "freq" => Ok(OneShotVariant::Freq),
            "refine" => Ok(OneShotVariant::Refine),
            "axis" => Ok(OneShotVariant::Axis),
            other => Err(format!("unknown one-shot variant \"{other}\" (expected base, freq, refine or axis)")),
        }
    }
}

/// A category as emitted by the one-shot designer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneShotFailure {
    pub service: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneShotSummary {
    pub variant: OneShotVariant,
    pub design_attempts: usize,
    pub refine_cycles: usize,
    pub failures: Vec<OneShotFailure>,
}

fn read_nodes(v: &Value, level: usize) -> Vec<TreeNode> {
    let Some(items) = v.as_array() else { return Vec::new() };
    items
        .iter()
        .filter_map(|item| {
            let name = item
                .get("name")
                .or_else(|| item.get("category"))
                .and_then(Value::as_str)?
                .trim()
                .to_owned();
            if name.is_empty() {
                return None;
            }
            let children = if level + 1 < MAX_LEVELS {
                item.get("children")
                    .or_else(|| item.get("subcategories"))
                    .map(|c| read_nodes(c, level + 1))
                    .unwrap_or_default()
            } else {
                Vec::new()
            };
            Some(TreeNode {
                name,
                description: item.get("description").and_then(Value::as_str).unwrap_or("").trim().to_owned(),
                children,
            })
        })
        .collect()
}

/// Parses a designer reply; `None` when it holds no usable tree.
pub fn parse_tree(text: &str) -> Option<Vec<TreeNode>> {
    let v = extract_json(text).ok()?;
    let list = match &v {
        Value::Array(_) => &v,
        _ => v.get("categories").or_else(|| v.get("taxonomy"))?,
    };
    let nodes = read_nodes(list, 0);
    (!nodes.is_empty()).then_some(nodes)
}

fn leaf_paths(nodes: &[TreeNode]) -> Vec<(Vec<String>, String)> {
    fn walk(nodes: &[TreeNode], prefix: &mut Vec<String>, out: &mut Vec<(Vec<String>, String)>) {
        for n in nodes {
            prefix.push(n.name.clone());
            if n.children.is_empty() {
                out.push((prefix.clone(), n.description.clone()));
            } else {
                walk(&n.children, prefix, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(nodes, &mut Vec::new(), &mut out);
    out
}

fn render_tree(nodes: &[TreeNode]) -> String {
    leaf_paths(nodes)
        .into_iter()
        .map(|(path, desc)| {
            let p = path.join(" > ");
            if desc.is_empty() {
                format!("- {p}")
            } else {
                format!("- {p}: {}", prompts::one_line(&desc))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn norm(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*' || c == '-' || c == '.')
        .trim()
        .to_lowercase()
}

/// Index into `leaf_paths` for a `Top > Sub > Leaf` reply. Falls back to a
/// leaf whose own name matches the last segment when exactly one does.
pub fn resolve_path(nodes: &[TreeNode], reply: &str) -> Option<usize> {
    let paths = leaf_paths(nodes);
    let line = reply
        .lines()
        .map(str::trim)
        .find(|l| l.contains('>'))
        .or_else(|| reply.lines().map(str::trim).find(|l| !l.is_empty()))?;
    let line = line.split_once(':').map_or(line, |(head, tail)| if head.contains('>') { head } else if tail.contains('>') { tail } else { line });
    let segments: Vec<String> = line.split('>').map(norm).filter(|s| !s.is_empty()).collect();
    let last = segments.last()?;
    if let Some(i) = paths
        .iter()
        .position(|(p, _)| p.len() == segments.len() && p.iter().zip(&segments).all(|(a, b)| norm(a) == *b))
    {
        return Some(i);
    }
    let mut by_name = paths.iter().enumerate().filter(|(_, (p, _))| norm(p.last().unwrap()) == *last);
    match (by_name.next(), by_name.next()) {
        (Some((i, _)), None) => Some(i),
        _ => None,
    }
}

fn design(ctx: &BuildContext<'_>, variant: OneShotVariant, payload: DesignPayload<'_>) -> Result<(Vec<TreeNode>, usize), BuildError> {
    let (title, body) = payload.render();
    let rules = if variant.uses_axis_rules() { AXIS_RULES } else { "" };
    let (system, user) = prompts::ONESHOT_DESIGN.render(&[("axis_rules", rules), ("payload_title", title), ("payload", &body)]);
    let request = ctx.gateway.request(system, user);
    let first = ctx.chat(Phase::OneshotDesign, &request)?;
    if let Some(tree) = parse_tree(&first.text) {
        return Ok((tree, 1));
    }
    ctx.warn("one-shot design reply was not a usable JSON tree; asking again".into());
    let mut retry = request;
    retry
        .user_prompt
        .push_str("\n\nYour previous reply could not be parsed. Reply with the JSON object only, no prose.");
    let second = ctx.chat(Phase::OneshotDesign, &retry)?;
    parse_tree(&second.text)
        .map(|t| (t, 2))
        .ok_or_else(|| BuildError::OneShot("design reply unparsable after one retry".into()))
}

/// Leaf index per service (`None` = failure) plus the raw replies.
fn classify_all(ctx: &BuildContext<'_>, tree: &[TreeNode], services: &[&Service]) -> Result<Vec<(Option<usize>, String)>, BuildError> {
    let rendered = render_tree(tree);
    let results = ctx.pool.map(services, |s| {
        let line = service_line(s);
        let (system, user) = prompts::ONESHOT_CLASSIFY.render(&[("tree", &rendered), ("service", &line)]);
        let r = ctx
            .chat(Phase::OneshotClassify, &ctx.gateway.request(system, user))
            .map(|resp| resp.text);
        tolerate_transport(ctx, r).map(|text| (resolve_path(tree, &text), text))
    });
    results.into_iter().collect()
}

fn refine(ctx: &BuildContext<'_>, tree: &[TreeNode], failures: &[OneShotFailure], registry: &Registry) -> Result<Option<Vec<TreeNode>>, BuildError> {
    let mut lines: Vec<String> = failures
        .iter()
        .take(FAILURE_LIST_LIMIT)
        .map(|f| {
            let s = registry.get(&f.service).expect("failures name registry services");
            format!("- {} (answered: {})", service_line(s), prompts::one_line(&f.reply))
        })
        .collect();
    if failures.len() > FAILURE_LIST_LIMIT {
        lines.push(format!("- ... and {} more", failures.len() - FAILURE_LIST_LIMIT));
    }
    let tree_json = serde_json::to_string_pretty(&serde_json::json!({ "categories": tree })).expect("tree serializes");
    let (system, user) = prompts::ONESHOT_REFINE.render(&[("tree", &tree_json), ("failures", &lines.join("\n"))]);
    let resp = ctx.chat(Phase::OneshotRefine, &ctx.gateway.request(system, user))?;
    Ok(parse_tree(&resp.text))
}

fn assemble(tree: &[TreeNode], placements: &[(Option<usize>, String)], services: &[&Service]) -> Result<Taxonomy, BuildError> {
    let mut taxonomy = Taxonomy::new(ROOT_NAME, "Every service in the registry");
    let mut leaf_ids = Vec::new();
    fn add(t: &mut Taxonomy, parent: &str, nodes: &[TreeNode], leaf_ids: &mut Vec<String>) -> Result<(), BuildError> {
        for n in nodes {
            let id = t.add_child(parent, &n.name, &n.description, "")?;
            if n.children.is_empty() {
                leaf_ids.push(id);
            } else {
                add(t, &id, &n.children, leaf_ids)?;
            }
        }
        Ok(())
    }
    let root = taxonomy.root_id().to_owned();
    add(&mut taxonomy, &root, tree, &mut leaf_ids)?;
    for (s, (leaf, _)) in services.iter().zip(placements) {
        if let Some(i) = leaf {
            taxonomy.assign(&s.id, &leaf_ids[*i])?;
        }
    }
    taxonomy.prune_empty_leaves();
    Ok(taxonomy)
}

pub fn build_oneshot(
    registry: &Registry,
    gateway: &Gateway,
    cfg: &BuildConfig,
    variant: OneShotVariant,
) -> Result<(Taxonomy, BuildReport), BuildError> {
    cfg.check()?;
    if registry.is_empty() {
        return Err(BuildError::EmptyInput("the registry has no services".into()));
    }
    let ctx = BuildContext::new(gateway, cfg);
    let services: Vec<&Service> = registry.iter().collect();
    let table;
    let payload = if variant.uses_keywords() {
        table = extract_keywords(&ctx, &services)?;
        DesignPayload::Keywords(&table)
    } else {
        DesignPayload::Descriptions(&services)
    };
    let (mut tree, design_attempts) = design(&ctx, variant, payload)?;
    let mut placements = classify_all(&ctx, &tree, &services)?;
    let mut refine_cycles = 0;
    let failures_of = |p: &[(Option<usize>, String)]| -> Vec<OneShotFailure> {
        services
            .iter()
            .zip(p)
            .filter(|(_, (leaf, _))| leaf.is_none())
            .map(|(s, (_, reply))| OneShotFailure {
                service: s.id.clone(),
                reply: reply.clone(),
            })
            .collect()
    };
    let mut failures = failures_of(&placements);
    while variant.refines() && !failures.is_empty() && refine_cycles < cfg.max_refine_iterations {
        refine_cycles += 1;
        match refine(&ctx, &tree, &failures, registry)? {
            Some(revised) => {
                tree = revised;
                placements = classify_all(&ctx, &tree, &services)?;
                failures = failures_of(&placements);
            }
            None => {
                ctx.warn("one-shot refine reply was not a usable JSON tree; keeping the previous taxonomy".into());
                break;
            }
        }
    }
    if !failures.is_empty() {
        ctx.warn(format!("{} services could not be placed by the one-shot classifier", failures.len()));
    }
    let taxonomy = assemble(&tree, &placements, &services)?;
    let mut report = BuildReport::assemble(&format!("oneshot-{}", variant.as_str()), &ctx, &taxonomy, registry);
    report.oneshot = Some(OneShotSummary {
        variant,
        design_attempts,
        refine_cycles,
        failures,
    });
    Ok((taxonomy, report))
}
