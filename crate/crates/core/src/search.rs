//! Progressive-disclosure retrieval over a built taxonomy.
//!
//! A query descends from the root; at each internal node the model sees only
//! that node's children and picks which to open. Reached leaves are
//! deduplicated first-come, small groups are merged by tree distance, and one
//! selection call per group picks the services.

use std::collections::HashSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::{CallCost, Gateway, GatewayError, SelectionStatus};
use crate::par::Pool;
use crate::prompts;
use crate::registry::Registry;
use crate::taxonomy::{Taxonomy, TaxonomyError, TaxonomyNode};

pub const NAVIGATE_LABEL: &str = "navigate";
pub const SELECT_LABEL: &str = "select";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    GetAll,
    GetImportant,
    GetOne,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::GetAll, Mode::GetImportant, Mode::GetOne];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::GetAll => "get_all",
            Mode::GetImportant => "get_important",
            Mode::GetOne => "get_one",
        }
    }

    pub fn navigate_instruction(&self) -> &'static str {
        match self {
            Mode::GetAll => "Open every category that could contain a service relevant to the query.",
            Mode::GetImportant => {
                "Open only the categories that hold the services the query most needs; skip marginal ones and do not open two categories for the same function."
            }
            Mode::GetOne => "Open only the single most relevant category.",
        }
    }

    pub fn select_instruction(&self) -> &'static str {
        match self {
            Mode::GetAll => "Choose every service that is relevant to the query.",
            Mode::GetImportant => {
                "Choose the services that matter most for the query, keeping only one service per distinct function."
            }
            Mode::GetOne => "Choose only the single most relevant service.",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "get_all" | "all" => Ok(Mode::GetAll),
            "get_important" | "important" => Ok(Mode::GetImportant),
            "get_one" | "one" => Ok(Mode::GetOne),
            other => Err(format!("unknown mode \"{other}\" (expected get_all, get_important or get_one)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub mode: Mode,
    pub theta_merge: usize,
    pub workers: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mode: Mode::GetAll,
            theta_merge: 30,
            workers: 20,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("taxonomy leaf {leaf} lists service \"{service}\", which is not in the registry")]
    UnknownService { leaf: String, service: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafHit {
    pub leaf_id: String,
    pub services: Vec<String>,
}

/// Services sent to one selection call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    /// Leaf used for distance computations; the earliest merged hit's leaf.
    pub representative: String,
    pub leaves: Vec<String>,
    pub services: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Navigate,
    Select,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: StepKind,
    /// Node navigated from, or the group's representative leaf.
    pub node: String,
    pub depth: usize,
    /// Ids of the options shown, in prompt order.
    pub options: Vec<String>,
    /// 1-based positions chosen.
    pub chosen: Vec<usize>,
    /// `Failed` marks a subtree or group pruned by an unreadable reply rather than by decision.
    pub status: SelectionStatus,
    pub cost: CallCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub service_ids: Vec<String>,
    pub trace: Vec<TraceStep>,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub navigation_calls: usize,
    /// Levels at which at least one navigation call was made.
    pub depth_reached: usize,
    /// Navigation decisions per navigated level.
    pub branches_per_level: f64,
    pub groups_visited: usize,
    pub group_sizes: Vec<usize>,
    pub failed_parses: usize,
}

impl RetrievalResult {
    pub fn cost(&self) -> CallCost {
        CallCost {
            calls: self.calls,
            prompt_tokens: self.prompt_tokens,
            output_tokens: self.output_tokens,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.output_tokens
    }

    /// Step count predicted by `d * b + g`.
    pub fn cost_model_steps(&self) -> f64 {
        self.depth_reached as f64 * self.branches_per_level + self.groups_visited as f64
    }

    fn from_trace(service_ids: Vec<String>, trace: Vec<TraceStep>, group_sizes: Vec<usize>) -> Self {
        let cost: CallCost = trace.iter().map(|s| s.cost).sum();
        let nav: Vec<&TraceStep> = trace.iter().filter(|s| s.kind == StepKind::Navigate).collect();
        let depths: HashSet<usize> = nav.iter().map(|s| s.depth).collect();
        let d = depths.len();
        RetrievalResult {
            service_ids,
            calls: cost.calls,
            prompt_tokens: cost.prompt_tokens,
            output_tokens: cost.output_tokens,
            navigation_calls: nav.len(),
            depth_reached: d,
            branches_per_level: if d == 0 { 0.0 } else { nav.len() as f64 / d as f64 },
            groups_visited: trace.iter().filter(|s| s.kind == StepKind::Select).count(),
            group_sizes,
            failed_parses: trace.iter().filter(|s| s.status == SelectionStatus::Failed).count(),
            trace,
        }
    }
}

/// `(system, user)` for one navigation call over `children`.
pub fn navigate_prompt(mode: Mode, query: &str, children: &[&TaxonomyNode]) -> (String, String) {
    let categories = prompts::numbered_categories(
        children
            .iter()
            .map(|c| (c.name.as_str(), c.description.as_str(), c.boundary.as_str())),
    );
    prompts::NAVIGATE.render(&[
        ("mode_instruction", mode.navigate_instruction()),
        ("query", query),
        ("categories", &categories),
    ])
}

/// Keeps each service in the earliest hit that has it; drops emptied hits.
pub fn dedup(hits: Vec<LeafHit>) -> Vec<LeafHit> {
    let mut seen = HashSet::new();
    hits.into_iter()
        .filter_map(|mut h| {
            h.services.retain(|s| seen.insert(s.clone()));
            (!h.services.is_empty()).then_some(h)
        })
        .collect()
}

/// Greedily merges the closest pair of groups that are both below
/// `theta_merge`, until no such pair remains.
///
/// Closeness is tree distance between representative leaves; ties go to the
/// smaller combined size, then the lexicographically smaller pair of leaf ids.
pub fn merge_small_groups(hits: Vec<LeafHit>, theta_merge: usize, taxonomy: &Taxonomy) -> Result<Vec<Group>, TaxonomyError> {
    let mut groups: Vec<Group> = hits
        .into_iter()
        .map(|h| Group {
            representative: h.leaf_id.clone(),
            leaves: vec![h.leaf_id],
            services: h.services,
        })
        .collect();
    loop {
        let mut best: Option<(MergeKey, usize, usize)> = None;
        for i in 0..groups.len() {
            if groups[i].services.len() >= theta_merge {
                continue;
            }
            for j in i + 1..groups.len() {
                if groups[j].services.len() >= theta_merge {
                    continue;
                }
                let (a, b) = (&groups[i].representative, &groups[j].representative);
                let (lo, hi) = if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                let key = (
                    taxonomy.lca_distance(a, b)?,
                    groups[i].services.len() + groups[j].services.len(),
                    lo,
                    hi,
                );
                if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                    best = Some((key, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { return Ok(groups) };
        let later = groups.remove(j);
        groups[i].leaves.extend(later.leaves);
        groups[i].services.extend(later.services);
    }
}

/// Tree distance, combined size, then the ordered pair of representatives.
type MergeKey = (usize, usize, String, String);

/// Runs queries against one taxonomy.
pub struct Searcher<'a> {
    taxonomy: &'a Taxonomy,
    registry: &'a Registry,
    gateway: &'a Gateway,
    cfg: SearchConfig,
    pool: Pool,
}

impl<'a> Searcher<'a> {
    pub fn new(taxonomy: &'a Taxonomy, registry: &'a Registry, gateway: &'a Gateway, cfg: SearchConfig) -> Result<Self, SearchError> {
        if cfg.theta_merge == 0 {
            return Err(SearchError::Config("theta_merge must be at least 1".into()));
        }
        for leaf in taxonomy.leaves() {
            if let Some(s) = leaf.service_ids.iter().find(|s| !registry.contains(s)) {
                return Err(SearchError::UnknownService {
                    leaf: leaf.id.clone(),
                    service: s.clone(),
                });
            }
        }
        Ok(Searcher {
            pool: Pool::new(cfg.workers),
            taxonomy,
            registry,
            gateway,
            cfg,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    /// Descends from `node`; hits come back depth-first in child order.
    pub fn navigate(&self, node: &str, query: &str) -> Result<(Vec<LeafHit>, Vec<TraceStep>), SearchError> {
        let n = self
            .taxonomy
            .node(node)
            .ok_or_else(|| TaxonomyError::UnknownNode(node.to_owned()))?;
        if n.is_leaf() {
            let hits = if n.service_ids.is_empty() {
                Vec::new()
            } else {
                vec![LeafHit {
                    leaf_id: n.id.clone(),
                    services: n.service_ids.clone(),
                }]
            };
            return Ok((hits, Vec::new()));
        }
        let children: Vec<&TaxonomyNode> = self.taxonomy.children(node).collect();
        let (system, user) = navigate_prompt(self.cfg.mode, query, &children);
        let sel = self
            .gateway
            .select_indices(NAVIGATE_LABEL, &self.gateway.request(system, user), children.len())?;
        let mut chosen: Vec<usize> = sel.list.indices.clone();
        if self.cfg.mode == Mode::GetOne {
            chosen.truncate(1);
        }
        let mut trace = vec![TraceStep {
            kind: StepKind::Navigate,
            node: n.id.clone(),
            depth: n.depth,
            options: children.iter().map(|c| c.id.clone()).collect(),
            chosen: chosen.clone(),
            status: sel.status,
            cost: sel.cost,
        }];
        let mut order = chosen.clone();
        order.sort_unstable();
        let targets: Vec<&str> = order.iter().map(|&i| children[i - 1].id.as_str()).collect();
        let subs = self.pool.map(&targets, |t| self.navigate(t, query));
        let mut hits = Vec::new();
        for sub in subs {
            let (h, t) = sub?;
            hits.extend(h);
            trace.extend(t);
        }
        Ok((hits, trace))
    }

    fn select_group(&self, group: &Group, query: &str) -> Result<TraceStep, SearchError> {
        let services = prompts::numbered_services(group.services.iter().map(|id| {
            let s = self.registry.get(id).expect("validated at construction");
            (s.name.as_str(), s.description.as_str())
        }));
        let (system, user) = prompts::SELECT.render(&[
            ("mode_instruction", self.cfg.mode.select_instruction()),
            ("query", query),
            ("services", &services),
        ]);
        let sel = self
            .gateway
            .select_indices(SELECT_LABEL, &self.gateway.request(system, user), group.services.len())?;
        let mut chosen = sel.list.indices.clone();
        if sel.list.dropped > 0 {
            log::debug!("selection for {} dropped {} out-of-range indices", group.representative, sel.list.dropped);
        }
        if self.cfg.mode == Mode::GetOne {
            chosen.truncate(1);
        } else {
            chosen.sort_unstable();
        }
        Ok(TraceStep {
            kind: StepKind::Select,
            node: group.representative.clone(),
            depth: self.taxonomy.node(&group.representative).map_or(0, |n| n.depth),
            options: group.services.clone(),
            chosen,
            status: sel.status,
            cost: sel.cost,
        })
    }

    pub fn retrieve(&self, query: &str) -> Result<RetrievalResult, SearchError> {
        let (hits, mut trace) = self.navigate(self.taxonomy.root_id(), query)?;
        let groups = merge_small_groups(dedup(hits), self.cfg.theta_merge, self.taxonomy)?;
        let steps = self.pool.map(&groups, |g| self.select_group(g, query));
        let mut ids = Vec::new();
        for (g, step) in groups.iter().zip(steps) {
            let step = step?;
            ids.extend(step.chosen.iter().map(|&i| g.services[i - 1].clone()));
            trace.push(step);
        }
        if self.cfg.mode == Mode::GetOne {
            ids.truncate(1);
        }
        let sizes = groups.iter().map(|g| g.services.len()).collect();
        Ok(RetrievalResult::from_trace(ids, trace, sizes))
    }
}
