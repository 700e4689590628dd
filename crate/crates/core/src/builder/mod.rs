//! Taxonomy construction.
//!
//! [`build`] grows the tree breadth-first: every node larger than
//! `theta_leaf` (and shallower than `max_depth`) is split by
//! [`split::split_node`]. Nodes of one level are processed concurrently and
//! merged into the tree in order on the calling thread, so a scripted backend
//! yields identical output regardless of worker count. [`oneshot`] holds the
//! single-pass baseline builder.

pub mod classify;
pub mod cross_domain;
pub mod design;
pub mod keywords;
pub mod oneshot;
pub mod split;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::gateway::{CallCost, ChatRequest, ChatResponse, Gateway, GatewayError, Selection};
use crate::par::Pool;
use crate::registry::{Registry, Service};
use crate::taxonomy::{Taxonomy, TaxonomyError, TaxonomyStats, ValidationReport};

pub use classify::{ClassificationOutcome, ClassificationStatus};
pub use cross_domain::CrossDomainSummary;
pub use design::{AxisTag, CategoryDraft, DesignPayload, ParentContext};
pub use keywords::KeywordTable;
pub use oneshot::{build_oneshot, OneShotFailure, OneShotSummary, OneShotVariant};
pub use split::{ChildPlan, SplitOutcome, SplitStats, CATCH_ALL_NAME};

pub const ROOT_NAME: &str = "All services";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Nodes larger than this are designed from keywords, not descriptions.
    pub theta_kw: usize,
    /// Nodes at most this large become leaves.
    pub theta_leaf: usize,
    pub max_depth: usize,
    pub generic_ratio: f64,
    pub max_categories_size: usize,
    pub max_refine_iterations: usize,
    pub keyword_batch_size: usize,
    pub workers: usize,
    /// Children with at most this many services are dissolved.
    pub tiny_merge_threshold: usize,
    pub validate_root: bool,
    pub cross_domain: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            theta_kw: 500,
            theta_leaf: 40,
            max_depth: 3,
            generic_ratio: 1.0 / 3.0,
            max_categories_size: 20,
            max_refine_iterations: 3,
            keyword_batch_size: 50,
            workers: 20,
            tiny_merge_threshold: 2,
            validate_root: true,
            cross_domain: true,
        }
    }
}

impl BuildConfig {
    pub fn check(&self) -> Result<(), BuildError> {
        let counts = [
            ("theta_kw", self.theta_kw),
            ("theta_leaf", self.theta_leaf),
            ("max_depth", self.max_depth),
            ("max_categories_size", self.max_categories_size),
            ("max_refine_iterations", self.max_refine_iterations),
            ("keyword_batch_size", self.keyword_batch_size),
            ("workers", self.workers),
            ("tiny_merge_threshold", self.tiny_merge_threshold),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(BuildError::Config(format!("{name} must be at least 1")));
        }
        if self.max_categories_size < 2 {
            return Err(BuildError::Config("max_categories_size must be at least 2".into()));
        }
        if !(self.generic_ratio > 0.0 && self.generic_ratio < 1.0) {
            return Err(BuildError::Config("generic_ratio must lie strictly between 0 and 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("invalid build configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("every keyword batch failed to parse")]
    KeywordsFailed,
    #[error("category design failed at {path}: {reason}")]
    Design { path: String, reason: String },
    #[error("one-shot taxonomy unusable: {0}")]
    OneShot(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Call sites, used as metering labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Keyword,
    Design,
    Validate,
    Classify,
    Refine,
    Placement,
    CrossDomain,
    OneshotDesign,
    OneshotClassify,
    OneshotRefine,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Keyword => "keyword",
            Phase::Design => "design",
            Phase::Validate => "validate",
            Phase::Classify => "classify",
            Phase::Refine => "refine",
            Phase::Placement => "placement",
            Phase::CrossDomain => "cross_domain",
            Phase::OneshotDesign => "oneshot_design",
            Phase::OneshotClassify => "oneshot_classify",
            Phase::OneshotRefine => "oneshot_refine",
        }
    }
}

/// Shared state for one build run.
pub struct BuildContext<'a> {
    pub gateway: &'a Gateway,
    pub cfg: &'a BuildConfig,
    pub pool: Pool,
    ledger: Mutex<BTreeMap<&'static str, CallCost>>,
    warnings: Mutex<Vec<String>>,
}

impl<'a> BuildContext<'a> {
    pub fn new(gateway: &'a Gateway, cfg: &'a BuildConfig) -> Self {
        BuildContext {
            gateway,
            cfg,
            pool: Pool::new(cfg.workers),
            ledger: Mutex::new(BTreeMap::new()),
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn chat(&self, phase: Phase, request: &ChatRequest) -> Result<ChatResponse, BuildError> {
        let resp = self.gateway.chat(request, phase.label())?;
        *self.ledger.lock().unwrap().entry(phase.label()).or_default() += CallCost::of(&resp);
        Ok(resp)
    }

    pub fn select(&self, phase: Phase, request: &ChatRequest, n_options: usize) -> Result<Selection, BuildError> {
        let sel = self.gateway.select_indices(phase.label(), request, n_options)?;
        *self.ledger.lock().unwrap().entry(phase.label()).or_default() += sel.cost;
        Ok(sel)
    }

    pub fn warn(&self, message: String) {
        log::warn!("{message}");
        self.warnings.lock().unwrap().push(message);
    }

    pub fn phase_costs(&self) -> BTreeMap<String, CallCost> {
        self.ledger
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap().clone()
    }
}

/// Transport failures that survived retries degrade to an empty answer so one
/// flaky call cannot abort a long build. Other errors propagate.
pub(crate) fn tolerate_transport<T: Default>(ctx: &BuildContext<'_>, r: Result<T, BuildError>) -> Result<T, BuildError> {
    match r {
        Err(BuildError::Gateway(GatewayError::Transport { message, .. })) => {
            ctx.warn(format!("call abandoned after retries: {message}"));
            Ok(T::default())
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOutcome {
    Leaf,
    Split,
    /// Left as a leaf although larger than `theta_leaf` and above `max_depth`.
    Oversized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub depth: usize,
    pub size: usize,
    pub outcome: NodeOutcome,
    #[serde(flatten)]
    pub stats: SplitStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub builder: String,
    pub phases: BTreeMap<String, CallCost>,
    pub total: CallCost,
    pub nodes: Vec<NodeRecord>,
    pub tiny_merged: usize,
    pub catch_all_placements: usize,
    pub generic_services: usize,
    pub oversized_leaves: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_domain: Option<CrossDomainSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oneshot: Option<OneShotSummary>,
    pub warnings: Vec<String>,
    pub stats: TaxonomyStats,
    pub validation: ValidationReport,
}

impl BuildReport {
    pub(crate) fn assemble(builder: &str, ctx: &BuildContext<'_>, taxonomy: &Taxonomy, registry: &Registry) -> Self {
        let phases = ctx.phase_costs();
        BuildReport {
            builder: builder.to_owned(),
            total: phases.values().copied().sum(),
            phases,
            nodes: Vec::new(),
            tiny_merged: 0,
            catch_all_placements: 0,
            generic_services: 0,
            oversized_leaves: Vec::new(),
            cross_domain: None,
            oneshot: None,
            warnings: ctx.warnings(),
            stats: taxonomy.stats(),
            validation: taxonomy.validate(registry, ctx.cfg.max_depth),
        }
    }

    pub fn calls(&self, phase: Phase) -> u64 {
        self.phases.get(phase.label()).map_or(0, |c| c.calls)
    }
}

struct Pending {
    id: String,
    depth: usize,
    /// Registry positions.
    members: Vec<usize>,
    context: ParentContext,
}

fn child_context(parent: &ParentContext, draft: &CategoryDraft) -> ParentContext {
    let mut path = parent.path.clone();
    path.push(draft.name.clone());
    ParentContext {
        path,
        description: draft.description.clone(),
        boundary: draft.boundary.clone(),
    }
}

/// Builds a taxonomy over `registry` breadth-first.
pub fn build(registry: &Registry, gateway: &Gateway, cfg: &BuildConfig) -> Result<(Taxonomy, BuildReport), BuildError> {
    cfg.check()?;
    if registry.is_empty() {
        return Err(BuildError::EmptyInput("the registry has no services".into()));
    }
    let ctx = BuildContext::new(gateway, cfg);
    let mut taxonomy = Taxonomy::new(ROOT_NAME, "Every service in the registry");
    let mut records = Vec::new();
    let mut frontier = vec![Pending {
        id: taxonomy.root_id().to_owned(),
        depth: 0,
        members: (0..registry.len()).collect(),
        context: ParentContext::default(),
    }];

    while !frontier.is_empty() {
        let outcomes = ctx.pool.map(&frontier, |p| -> Result<Option<SplitOutcome>, BuildError> {
            if p.members.len() <= cfg.theta_leaf || p.depth >= cfg.max_depth {
                return Ok(None);
            }
            let services: Vec<&Service> = p.members.iter().map(|&i| &registry.services()[i]).collect();
            split_node_logged(&ctx, p, &services).map(Some)
        });
        let mut next = Vec::new();
        for (p, outcome) in frontier.into_iter().zip(outcomes) {
            let outcome = outcome?;
            let (node_outcome, stats) = match outcome {
                None => (NodeOutcome::Leaf, SplitStats::default()),
                Some(SplitOutcome { children: None, stats }) => (NodeOutcome::Oversized, stats),
                Some(SplitOutcome {
                    children: Some(children),
                    stats,
                }) => {
                    for plan in children {
                        let child = taxonomy.add_child(&p.id, &plan.draft.name, &plan.draft.description, &plan.draft.boundary)?;
                        let members: Vec<usize> = plan.members.iter().map(|&i| p.members[i]).collect();
                        let pending = Pending {
                            id: child,
                            depth: p.depth + 1,
                            context: child_context(&p.context, &plan.draft),
                            members,
                        };
                        if pending.members.len() > cfg.theta_leaf && pending.depth < cfg.max_depth {
                            next.push(pending);
                        } else {
                            settle_leaf(&mut taxonomy, registry, &pending)?;
                            records.push(NodeRecord {
                                id: pending.id,
                                depth: pending.depth,
                                size: pending.members.len(),
                                outcome: NodeOutcome::Leaf,
                                stats: SplitStats::default(),
                            });
                        }
                    }
                    (NodeOutcome::Split, stats)
                }
            };
            if node_outcome != NodeOutcome::Split {
                settle_leaf(&mut taxonomy, registry, &p)?;
            }
            records.push(NodeRecord {
                id: p.id,
                depth: p.depth,
                size: p.members.len(),
                outcome: node_outcome,
                stats,
            });
        }
        frontier = next;
    }

    let cross = if cfg.cross_domain {
        Some(cross_domain::cross_domain_assign(&ctx, &mut taxonomy, registry)?)
    } else {
        None
    };

    records.sort_by(|a, b| a.depth.cmp(&b.depth).then_with(|| a.id.cmp(&b.id)));
    let mut report = BuildReport::assemble("bfs", &ctx, &taxonomy, registry);
    report.tiny_merged = records.iter().map(|r| r.stats.tiny_merged).sum();
    report.catch_all_placements = records.iter().map(|r| r.stats.catch_all).sum();
    report.generic_services = records.iter().map(|r| r.stats.generic_services).sum();
    report.oversized_leaves = records
        .iter()
        .filter(|r| r.outcome == NodeOutcome::Oversized)
        .map(|r| r.id.clone())
        .collect();
    report.nodes = records;
    report.cross_domain = cross;
    Ok((taxonomy, report))
}

fn split_node_logged(ctx: &BuildContext<'_>, p: &Pending, services: &[&Service]) -> Result<SplitOutcome, BuildError> {
    log::info!("splitting {} ({} services, depth {})", p.context.path_label(), services.len(), p.depth);
    split::split_node(ctx, &p.context, services, p.depth == 0)
}

fn settle_leaf(taxonomy: &mut Taxonomy, registry: &Registry, p: &Pending) -> Result<(), BuildError> {
    for &i in &p.members {
        taxonomy.assign(&registry.services()[i].id, &p.id)?;
    }
    Ok(())
}
