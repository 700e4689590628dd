mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::{gateway, World};
use proptest::prelude::*;
use taxoseek::gateway::mock::ScriptedChat;
use taxoseek::registry::{Registry, Service};
use taxoseek::search::{dedup, merge_small_groups, LeafHit, Mode, SearchConfig, SearchError, Searcher, StepKind};
use taxoseek::taxonomy::Taxonomy;

fn cfg(mode: Mode) -> SearchConfig {
    SearchConfig {
        mode,
        workers: 4,
        ..Default::default()
    }
}

fn world() -> Arc<World> {
    Arc::new(World::new(4, 4, 200).with_queries(20, 2, 7))
}

#[test]
fn one_branch_costs_three_calls() {
    let w = world();
    let (t, reg) = (w.taxonomy(), w.registry());
    let c = w.chat();
    let g = gateway(c.clone());
    let s = Searcher::new(&t, &reg, &g, cfg(Mode::GetAll)).unwrap();
    let q = &w.queries[0];
    let r = s.retrieve(&q.text).unwrap();
    assert_eq!(r.calls, 3);
    assert_eq!((r.navigation_calls, r.depth_reached, r.groups_visited), (2, 2, 1));
    assert_eq!(r.service_ids.iter().cloned().collect::<BTreeSet<_>>(), q.ground_truth);
    assert_eq!(g.meter().total_calls(), 3);
}

#[test]
fn two_small_leaves_share_one_selection() {
    let w = world();
    let (t, reg) = (w.taxonomy(), w.registry());
    let g = gateway(w.chat());
    let s = Searcher::new(&t, &reg, &g, cfg(Mode::GetAll)).unwrap();
    let q = &w.queries[1];
    let r = s.retrieve(&q.text).unwrap();
    assert_eq!(r.navigation_calls, 3);
    assert_eq!(r.groups_visited, 1);
    assert_eq!(r.group_sizes.len(), 1);
    assert_eq!(r.calls, 4);
    assert_eq!(r.branches_per_level, 1.5);
    assert_eq!(r.service_ids.iter().cloned().collect::<BTreeSet<_>>(), q.ground_truth);
}

#[test]
fn empty_root_choice_ends_the_search() {
    let w = world();
    let (t, reg) = (w.taxonomy(), w.registry());
    let c = Arc::new(ScriptedChat::new().default_reply("0"));
    let g = gateway(c.clone());
    let s = Searcher::new(&t, &reg, &g, cfg(Mode::GetAll)).unwrap();
    let r = s.retrieve("nothing relevant").unwrap();
    assert!(r.service_ids.is_empty());
    assert_eq!(r.calls, 1);
    assert_eq!(c.invocations(), 1);
    assert_eq!(r.trace.len(), 1);
}

#[test]
fn get_one_follows_a_single_branch() {
    let w = world();
    let (t, reg) = (w.taxonomy(), w.registry());
    let c = Arc::new(ScriptedChat::new().default_reply("1, 2, 3"));
    let g = gateway(c);
    let s = Searcher::new(&t, &reg, &g, cfg(Mode::GetOne)).unwrap();
    let r = s.retrieve("anything").unwrap();
    assert_eq!(r.service_ids, ["s0000"]);
    assert_eq!(r.calls, 3);
    assert!(r.trace.iter().all(|st| st.chosen.len() == 1));
}

#[test]
fn unvisited_leaves_are_never_shown() {
    let w = world();
    let (t, reg) = (w.taxonomy(), w.registry());
    let c = w.chat();
    let g = gateway(c.clone());
    let s = Searcher::new(&t, &reg, &g, cfg(Mode::GetAll)).unwrap();
    let q = &w.queries[0];
    s.retrieve(&q.text).unwrap();
    let shown: String = c.calls().iter().map(|x| x.user_prompt.clone()).collect();
    let target = w.latent[q.ground_truth.iter().next().unwrap()];
    for svc in &w.services {
        let visible = shown.contains(&format!(". {}:", svc.name));
        assert_eq!(visible, w.latent[&svc.id] == target, "{}", svc.name);
    }
}

#[test]
fn trace_lists_navigation_before_selection() {
    let w = world();
    let (t, reg) = (w.taxonomy(), w.registry());
    let g = gateway(w.chat());
    let s = Searcher::new(&t, &reg, &g, cfg(Mode::GetImportant)).unwrap();
    let r = s.retrieve(&w.queries[3].text).unwrap();
    let kinds: Vec<StepKind> = r.trace.iter().map(|s| s.kind).collect();
    let first_select = kinds.iter().position(|k| *k == StepKind::Select).unwrap();
    assert!(kinds[first_select..].iter().all(|k| *k == StepKind::Select));
    assert_eq!(r.trace[0].node, "root");
    assert_eq!(r.cost().calls, r.calls);
}

#[test]
fn unknown_leaf_services_are_rejected() {
    let w = world();
    let t = w.taxonomy();
    let reg = Registry::new(w.services[1..].to_vec()).unwrap();
    let g = gateway(w.chat());
    assert!(matches!(
        Searcher::new(&t, &reg, &g, cfg(Mode::GetAll)),
        Err(SearchError::UnknownService { .. })
    ));
    let reg = w.registry();
    let bad = SearchConfig {
        theta_merge: 0,
        ..cfg(Mode::GetAll)
    };
    assert!(matches!(Searcher::new(&t, &reg, &g, bad), Err(SearchError::Config(_))));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let w = world();
    let (t, reg) = (w.taxonomy(), w.registry());
    let run = |workers| {
        let g = gateway(w.chat());
        let s = Searcher::new(&t, &reg, &g, SearchConfig { workers, ..cfg(Mode::GetAll) }).unwrap();
        w.queries
            .iter()
            .map(|q| serde_json::to_string(&s.retrieve(&q.text).unwrap()).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(8));
}

fn leaf_world() -> (Taxonomy, Vec<String>) {
    let w = World::new(3, 3, 9);
    let t = w.taxonomy();
    let leaves = t.leaves().map(|l| l.id.clone()).collect();
    (t, leaves)
}

fn hits_strategy(n_leaves: usize) -> impl Strategy<Value = Vec<(usize, Vec<u8>)>> {
    prop::collection::vec((0..n_leaves, prop::collection::vec(0u8..60, 1..40)), 0..9)
}

fn to_hits(raw: &[(usize, Vec<u8>)], leaves: &[String]) -> Vec<LeafHit> {
    let mut used = BTreeSet::new();
    raw.iter()
        .filter(|(l, _)| used.insert(*l))
        .map(|(l, s)| {
            let mut services: Vec<String> = s.iter().map(|x| format!("s{x}")).collect();
            services.dedup();
            LeafHit {
                leaf_id: leaves[*l].clone(),
                services,
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn dedup_keeps_first_occurrence_once(raw in hits_strategy(9)) {
        let (_, leaves) = leaf_world();
        let hits = to_hits(&raw, &leaves);
        let mut first = Vec::new();
        let mut seen = BTreeSet::new();
        for h in &hits {
            for s in &h.services {
                if seen.insert(s.clone()) {
                    first.push(s.clone());
                }
            }
        }
        let out = dedup(hits);
        let flat: Vec<String> = out.iter().flat_map(|h| h.services.clone()).collect();
        prop_assert_eq!(flat, first);
        prop_assert!(out.iter().all(|h| !h.services.is_empty()));
    }

    #[test]
    fn merging_preserves_services_and_leaves_one_small_group(raw in hits_strategy(9), theta in 1usize..50) {
        let (t, leaves) = leaf_world();
        let hits = dedup(to_hits(&raw, &leaves));
        let before: Vec<String> = hits.iter().flat_map(|h| h.services.clone()).collect();
        let big: Vec<LeafHit> = hits.iter().filter(|h| h.services.len() >= theta).cloned().collect();
        let groups = merge_small_groups(hits, theta, &t).unwrap();
        let mut after: Vec<String> = groups.iter().flat_map(|g| g.services.clone()).collect();
        let mut sorted = before.clone();
        sorted.sort();
        after.sort();
        prop_assert_eq!(after, sorted);
        prop_assert!(groups.iter().filter(|g| g.services.len() < theta).count() <= 1);
        for b in big {
            prop_assert!(groups.iter().any(|g| g.leaves == vec![b.leaf_id.clone()] && g.services == b.services));
        }
        for g in &groups {
            prop_assert_eq!(&g.representative, &g.leaves[0]);
        }
    }
}

#[test]
fn nearest_small_groups_merge_first() {
    let (t, leaves) = leaf_world();
    let hit = |l: usize, s: &str| LeafHit {
        leaf_id: leaves[l].clone(),
        services: vec![s.to_owned()],
    };
    // leaves 0 and 1 share a parent; leaf 3 sits under another domain.
    let groups = merge_small_groups(vec![hit(0, "a"), hit(3, "b"), hit(1, "c")], 2, &t).unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0].leaves, [leaves[0].clone(), leaves[1].clone()]);
    assert_eq!(groups[0].services, ["a", "c"]);
    assert_eq!(groups[1].services, ["b"]);
}

#[test]
fn single_service_registry_searches_without_navigation() {
    let reg = Registry::new(vec![Service::new("x", "only", "the one")]).unwrap();
    let mut t = Taxonomy::new("All services", "everything");
    t.assign("x", "root").unwrap();
    let c = Arc::new(ScriptedChat::new().default_reply("1"));
    let g = gateway(c);
    let s = Searcher::new(&t, &reg, &g, cfg(Mode::GetAll)).unwrap();
    let r = s.retrieve("q").unwrap();
    assert_eq!(r.service_ids, ["x"]);
    assert_eq!((r.navigation_calls, r.calls), (0, 1));
}
