use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::classify::service_line;
use super::{tolerate_transport, BuildContext, BuildError, Phase};
use crate::prompts;
use crate::registry::Registry;
use crate::search::{navigate_prompt, Mode};
use crate::taxonomy::{Taxonomy, TaxonomyNode};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossDomainSummary {
    /// The pass needs at least two top-level domains.
    pub skipped: bool,
    pub leaves_reviewed: usize,
    pub proposals: usize,
    pub added: usize,
    pub duplicates: usize,
    pub same_domain: usize,
    pub unresolved: usize,
    /// Extra leaves gained per service -> number of services.
    pub extra_leaf_distribution: BTreeMap<usize, usize>,
}

/// One `<n> -> <domain>` line from a review reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    /// 1-based position in the leaf listing.
    pub service: usize,
    pub domain: String,
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[-*]?\s*\[?(\d+)\]?\.?\s*(?:->|→|=>|:)\s*(.+?)\s*$").unwrap())
}

pub fn parse_proposals(text: &str, n_services: usize) -> Vec<Proposal> {
    let mut out: Vec<Proposal> = Vec::new();
    for line in text.lines() {
        let Some(cap) = line_re().captures(line) else { continue };
        let Ok(i) = cap[1].parse::<usize>() else { continue };
        if !(1..=n_services).contains(&i) {
            continue;
        }
        let domain = cap[2]
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '.' || c.is_whitespace())
            .to_owned();
        if domain.is_empty() {
            continue;
        }
        let p = Proposal { service: i, domain };
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn resolve_domain<'t>(tops: &[&'t TaxonomyNode], name: &str) -> Option<&'t TaxonomyNode> {
    let want = name.trim().to_lowercase();
    tops.iter()
        .find(|t| t.name.to_lowercase() == want)
        .or_else(|| {
            let mut partial = tops.iter().filter(|t| {
                let n = t.name.to_lowercase();
                want.contains(&n) || n.contains(&want)
            });
            match (partial.next(), partial.next()) {
                (Some(t), None) => Some(t),
                _ => None,
            }
        })
        .copied()
}

/// Single-branch descent from `top` to a leaf, as a query search would do it.
fn route(ctx: &BuildContext<'_>, taxonomy: &Taxonomy, top: &str, query: &str) -> Result<Option<String>, BuildError> {
    let mut cur = top.to_owned();
    loop {
        let children: Vec<&TaxonomyNode> = taxonomy.children(&cur).collect();
        if children.is_empty() {
            return Ok(Some(cur));
        }
        let (system, user) = navigate_prompt(Mode::GetOne, query, &children);
        let r: Result<Vec<usize>, BuildError> = ctx
            .select(Phase::CrossDomain, &ctx.gateway.request(system, user), children.len())
            .map(|s| s.list.indices);
        match tolerate_transport(ctx, r)?.first() {
            Some(&i) => cur = children[i - 1].id.clone(),
            None => return Ok(None),
        }
    }
}

struct Candidate {
    service: String,
    top: String,
}

/// Reviews every leaf once and copies proposed services into the best leaf
/// of each named top-level domain. Mutations are applied in leaf order.
pub fn cross_domain_assign(
    ctx: &BuildContext<'_>,
    taxonomy: &mut Taxonomy,
    registry: &Registry,
) -> Result<CrossDomainSummary, BuildError> {
    let mut summary = CrossDomainSummary::default();
    let tops: Vec<&TaxonomyNode> = taxonomy.children(taxonomy.root_id()).collect();
    if tops.len() < 2 {
        summary.skipped = true;
        return Ok(summary);
    }
    let leaves: Vec<&TaxonomyNode> = taxonomy.leaves().filter(|l| !l.service_ids.is_empty()).collect();
    summary.leaves_reviewed = leaves.len();

    let reviews = ctx.pool.map(&leaves, |leaf| -> Result<Vec<Proposal>, BuildError> {
        let own = taxonomy.top_level_of(&leaf.id);
        let others: Vec<String> = tops
            .iter()
            .filter(|t| Some(t.id.as_str()) != own)
            .map(|t| format!("- {}: {}", t.name, prompts::one_line(&t.description)))
            .collect();
        let services = prompts::numbered_services(leaf.service_ids.iter().map(|id| {
            let s = registry.get(id).expect("leaf services resolve in the registry");
            (s.name.as_str(), s.description.as_str())
        }));
        let path = taxonomy.path_names(&leaf.id).join(" > ");
        let (system, user) = prompts::CROSS_DOMAIN.render(&[
            ("path", &path),
            ("services", &services),
            ("domains", &others.join("\n")),
        ]);
        let r = ctx
            .chat(Phase::CrossDomain, &ctx.gateway.request(system, user))
            .map(|resp| parse_proposals(&resp.text, leaf.service_ids.len()));
        tolerate_transport(ctx, r)
    });

    let mut candidates = Vec::new();
    for (leaf, review) in leaves.iter().zip(reviews) {
        let own = taxonomy.top_level_of(&leaf.id);
        for p in review? {
            summary.proposals += 1;
            let service = leaf.service_ids[p.service - 1].clone();
            match resolve_domain(&tops, &p.domain) {
                None => summary.unresolved += 1,
                Some(t) if Some(t.id.as_str()) == own => summary.same_domain += 1,
                Some(t) => candidates.push(Candidate {
                    service,
                    top: t.id.clone(),
                }),
            }
        }
    }

    let routed = ctx.pool.map(&candidates, |c| {
        let s = registry.get(&c.service).expect("leaf services resolve in the registry");
        let query = format!("Service to place: {}", service_line(s));
        route(ctx, taxonomy, &c.top, &query)
    });
    let mut placements = Vec::new();
    for (c, r) in candidates.into_iter().zip(routed) {
        match r? {
            Some(leaf) => placements.push((c.service, leaf)),
            None => summary.unresolved += 1,
        }
    }

    let mut gained: BTreeMap<String, usize> = BTreeMap::new();
    for (service, leaf) in placements {
        if taxonomy.assign(&service, &leaf)? {
            summary.added += 1;
            *gained.entry(service).or_default() += 1;
        } else {
            summary.duplicates += 1;
        }
    }
    for n in gained.into_values() {
        *summary.extra_leaf_distribution.entry(n).or_default() += 1;
    }
    Ok(summary)
}
