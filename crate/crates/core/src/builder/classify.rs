use serde::{Deserialize, Serialize};

use super::design::{CategoryDraft, ParentContext};
use super::{tolerate_transport, BuildContext, BuildError, Phase};
use crate::prompts;
use crate::registry::Service;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationStatus {
    Ok,
    Generic,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub service_id: String,
    /// Zero-based child indices in reply order.
    pub matched: Vec<usize>,
    pub status: ClassificationStatus,
}

/// `matched > ratio * children`, strictly. A single match is never generic.
pub fn classify_status(matched: usize, children: usize, generic_ratio: f64) -> ClassificationStatus {
    if matched == 0 {
        ClassificationStatus::Unmatched
    } else if matched >= 2 && matched as f64 > generic_ratio * children as f64 {
        ClassificationStatus::Generic
    } else {
        ClassificationStatus::Ok
    }
}

pub(crate) fn service_line(s: &Service) -> String {
    format!("{}: {}", s.name, prompts::one_line(&s.description))
}

fn listing(drafts: &[CategoryDraft]) -> String {
    prompts::numbered_categories(
        drafts
            .iter()
            .map(|d| (d.name.as_str(), d.description.as_str(), d.boundary.as_str())),
    )
}

/// One classify call per service, in parallel; outcomes in input order.
pub fn classify_services(
    ctx: &BuildContext<'_>,
    parent: &ParentContext,
    drafts: &[CategoryDraft],
    services: &[&Service],
) -> Result<Vec<ClassificationOutcome>, BuildError> {
    if drafts.is_empty() {
        return Err(BuildError::EmptyInput("classification needs at least one category".into()));
    }
    let path = parent.path_label();
    let categories = listing(drafts);
    let results = ctx.pool.map(services, |s| {
        let line = service_line(s);
        let (system, user) = prompts::CLASSIFY.render(&[("path", &path), ("categories", &categories), ("service", &line)]);
        let r = ctx
            .select(Phase::Classify, &ctx.gateway.request(system, user), drafts.len())
            .map(|sel| sel.list.zero_based().collect::<Vec<_>>());
        tolerate_transport(ctx, r)
    });
    services
        .iter()
        .zip(results)
        .map(|(s, r)| {
            let matched = r?;
            Ok(ClassificationOutcome {
                service_id: s.id.clone(),
                status: classify_status(matched.len(), drafts.len(), ctx.cfg.generic_ratio),
                matched,
            })
        })
        .collect()
}

/// Forced single choice among `drafts`; `None` when the reply names none.
pub fn place_one(
    ctx: &BuildContext<'_>,
    parent: &ParentContext,
    drafts: &[&CategoryDraft],
    service: &Service,
) -> Result<Option<usize>, BuildError> {
    let path = parent.path_label();
    let categories = prompts::numbered_categories(
        drafts
            .iter()
            .map(|d| (d.name.as_str(), d.description.as_str(), d.boundary.as_str())),
    );
    let line = service_line(service);
    let (system, user) = prompts::PLACEMENT.render(&[("path", &path), ("categories", &categories), ("service", &line)]);
    let r = ctx
        .select(Phase::Placement, &ctx.gateway.request(system, user), drafts.len())
        .map(|sel| sel.list.zero_based().collect::<Vec<_>>());
    Ok(tolerate_transport(ctx, r)?.first().copied())
}
