use serde::{Deserialize, Serialize};

use super::classify::{classify_services, place_one, ClassificationStatus};
use super::design::{design_categories, refine_node, validate_root, AxisTag, CategoryDraft, DesignPayload, ParentContext};
use super::keywords::extract_keywords;
use super::{BuildContext, BuildError};
use crate::registry::Service;

pub const CATCH_ALL_NAME: &str = "Other";

/// A child to create, with its members as indices into the node's services.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChildPlan {
    pub draft: CategoryDraft,
    pub members: Vec<usize>,
    pub catch_all: bool,
}

/// Counters gathered while splitting one node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub keyword_payload: bool,
    pub refine_calls: usize,
    pub classify_rounds: usize,
    pub generic_services: usize,
    pub tiny_merged: usize,
    pub reclassified: usize,
    pub catch_all: usize,
    pub forced_placements: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    /// `None` means the node stays a leaf despite its size.
    pub children: Option<Vec<ChildPlan>>,
    pub stats: SplitStats,
}

fn catch_all_draft(parent: &ParentContext, siblings: &[&CategoryDraft]) -> CategoryDraft {
    let names: Vec<&str> = siblings.iter().map(|d| d.name.as_str()).collect();
    let scope = if parent.path.is_empty() {
        "the registry".to_owned()
    } else {
        parent.path_label()
    };
    CategoryDraft {
        name: CATCH_ALL_NAME.to_owned(),
        description: format!("Services in {scope} that fit none of the sibling categories"),
        boundary: format!("NOT here: anything covered by {}", names.join(", ")),
        axis: siblings.first().map(|d| d.axis).unwrap_or(AxisTag::FunctionalDomain),
    }
}

/// Designs, classifies, refines and settles one oversized node.
pub fn split_node(
    ctx: &BuildContext<'_>,
    parent: &ParentContext,
    services: &[&Service],
    is_root: bool,
) -> Result<SplitOutcome, BuildError> {
    let cfg = ctx.cfg;
    let mut stats = SplitStats {
        keyword_payload: services.len() > cfg.theta_kw,
        ..Default::default()
    };
    let table;
    let payload = if stats.keyword_payload {
        table = extract_keywords(ctx, services)?;
        DesignPayload::Keywords(&table)
    } else {
        DesignPayload::Descriptions(services)
    };

    let mut drafts = match design_categories(ctx, payload, parent) {
        Ok(d) => d,
        Err(e) if is_root => return Err(e),
        Err(e) => {
            ctx.warn(format!("{e}; {} kept as an oversized leaf", parent.path_label()));
            return Ok(SplitOutcome { children: None, stats });
        }
    };
    if is_root && cfg.validate_root {
        drafts = validate_root(ctx, drafts, payload)?;
    }

    let mut outcomes;
    loop {
        outcomes = classify_services(ctx, parent, &drafts, services)?;
        stats.classify_rounds += 1;
        let clean = outcomes.iter().all(|o| o.status == ClassificationStatus::Ok);
        if clean || stats.refine_calls >= cfg.max_refine_iterations {
            break;
        }
        stats.refine_calls += 1;
        match refine_node(ctx, parent, &drafts, services, &outcomes) {
            Ok(d) => drafts = d,
            Err(e) => {
                ctx.warn(format!("refinement of {} stopped: {e}", parent.path_label()));
                break;
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); drafts.len()];
    let mut generic = Vec::new();
    let mut unmatched = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        match o.status {
            ClassificationStatus::Ok => o.matched.iter().for_each(|&c| members[c].push(i)),
            ClassificationStatus::Generic => generic.push(i),
            ClassificationStatus::Unmatched => unmatched.push(i),
        }
    }
    stats.generic_services = generic.len();
    let all: Vec<&CategoryDraft> = drafts.iter().collect();
    let placed = ctx.pool.map(&generic, |&i| place_one(ctx, parent, &all, services[i]));
    for (&i, p) in generic.iter().zip(placed) {
        let choice = p?.unwrap_or(outcomes[i].matched[0]);
        members[choice].push(i);
    }

    let (survivors, tiny): (Vec<usize>, Vec<usize>) =
        (0..drafts.len()).partition(|&c| members[c].len() > cfg.tiny_merge_threshold);
    stats.tiny_merged = tiny.len();
    if survivors.is_empty() {
        ctx.warn(format!(
            "every category under {} was tiny; node kept as an oversized leaf",
            parent.path_label()
        ));
        return Ok(SplitOutcome { children: None, stats });
    }
    let in_survivor = |i: usize| survivors.iter().any(|&c| members[c].contains(&i));
    let mut orphans: Vec<usize> = tiny
        .iter()
        .flat_map(|&c| members[c].iter().copied())
        .filter(|&i| !in_survivor(i))
        .collect();
    orphans.sort_unstable();
    orphans.dedup();
    stats.reclassified = orphans.len();

    let survivor_drafts: Vec<&CategoryDraft> = survivors.iter().map(|&c| &drafts[c]).collect();
    let mut leftover = Vec::new();
    let placed = ctx.pool.map(&orphans, |&i| place_one(ctx, parent, &survivor_drafts, services[i]));
    for (&i, p) in orphans.iter().zip(placed) {
        match p? {
            Some(k) => members[survivors[k]].push(i),
            None => leftover.push(i),
        }
    }

    let mut catch_all_members = Vec::new();
    if unmatched.len() + leftover.len() > cfg.tiny_merge_threshold {
        catch_all_members = unmatched.iter().chain(&leftover).copied().collect();
        catch_all_members.sort_unstable();
        stats.catch_all = catch_all_members.len();
    } else {
        let largest = *survivors.iter().max_by_key(|&&c| (members[c].len(), std::cmp::Reverse(c))).unwrap();
        let placed = ctx.pool.map(&unmatched, |&i| place_one(ctx, parent, &survivor_drafts, services[i]));
        for (&i, p) in unmatched.iter().zip(placed) {
            stats.forced_placements += 1;
            match p? {
                Some(k) => members[survivors[k]].push(i),
                None => members[largest].push(i),
            }
        }
        for &i in &leftover {
            stats.forced_placements += 1;
            members[largest].push(i);
        }
    }

    let mut children: Vec<ChildPlan> = survivors
        .iter()
        .map(|&c| {
            let mut m = std::mem::take(&mut members[c]);
            m.sort_unstable();
            m.dedup();
            ChildPlan {
                draft: drafts[c].clone(),
                members: m,
                catch_all: false,
            }
        })
        .collect();
    if !catch_all_members.is_empty() {
        children.push(ChildPlan {
            draft: catch_all_draft(parent, &survivor_drafts),
            members: catch_all_members,
            catch_all: true,
        });
    }
    Ok(SplitOutcome {
        children: Some(children),
        stats,
    })
}
