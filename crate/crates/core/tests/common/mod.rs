//! A synthetic registry generated from a known category tree, and a scripted
//! oracle that answers every prompt from those latent labels.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use taxoseek::gateway::mock::ScriptedChat;
use taxoseek::gateway::{ChatRequest, Gateway, GatewayConfig};
use taxoseek::registry::{QueryCase, Registry, Service};
use taxoseek::taxonomy::Taxonomy;

const DOMAINS: [&str; 8] = [
    "Travel", "Finance", "Health", "Media", "Education", "Retail", "Weather", "Security",
];
const TOPICS: [&str; 8] = [
    "Search", "Booking", "Analytics", "Alerts", "Reports", "Payments", "Storage", "Messaging",
];

pub struct World {
    pub domains: Vec<String>,
    pub subs: Vec<Vec<String>>,
    pub services: Vec<Service>,
    pub latent: HashMap<String, (usize, usize)>,
    by_name: HashMap<String, String>,
    pub queries: Vec<QueryCase>,
    truth_by_text: HashMap<String, BTreeSet<String>>,
}

impl World {
    /// `n_services` spread round-robin over `n_domains * n_subs` leaves.
    pub fn new(n_domains: usize, n_subs: usize, n_services: usize) -> Self {
        let domains: Vec<String> = DOMAINS[..n_domains].iter().map(|s| s.to_string()).collect();
        let subs: Vec<Vec<String>> = domains
            .iter()
            .map(|d| TOPICS[..n_subs].iter().map(|t| format!("{d} {t}")).collect())
            .collect();
        let leaves = n_domains * n_subs;
        let mut services = Vec::new();
        let mut latent = HashMap::new();
        let mut by_name = HashMap::new();
        let mut counter = vec![0usize; leaves];
        for i in 0..n_services {
            let leaf = i % leaves;
            let (d, s) = (leaf / n_subs, leaf % n_subs);
            counter[leaf] += 1;
            let id = format!("s{i:04}");
            let name = format!("{}-{}-{:02}", domains[d].to_lowercase(), TOPICS[s].to_lowercase(), counter[leaf]);
            let description = format!(
                "Provides {} capabilities for {} workflows, variant {}.",
                TOPICS[s].to_lowercase(),
                domains[d].to_lowercase(),
                counter[leaf]
            );
            latent.insert(id.clone(), (d, s));
            by_name.insert(name.clone(), id.clone());
            services.push(Service::new(id, name, description));
        }
        World {
            domains,
            subs,
            services,
            latent,
            by_name,
            queries: Vec::new(),
            truth_by_text: HashMap::new(),
        }
    }

    /// Adds `n` queries; each targets 1..=`max_leaves` leaves (in distinct
    /// domains when possible) and 1..=3 services per leaf.
    pub fn with_queries(mut self, n: usize, max_leaves: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_leaf: HashMap<(usize, usize), Vec<String>> = HashMap::new();
        for s in &self.services {
            by_leaf.entry(self.latent[&s.id]).or_default().push(s.id.clone());
        }
        let mut leaves: Vec<(usize, usize)> = by_leaf.keys().copied().collect();
        leaves.sort();
        for j in 0..n {
            let want = if max_leaves <= 1 { 1 } else { 1 + j % max_leaves };
            let mut chosen: Vec<(usize, usize)> = Vec::new();
            let mut pool = leaves.clone();
            pool.shuffle(&mut rng);
            for l in pool {
                if chosen.len() == want {
                    break;
                }
                if chosen.iter().all(|c| c.0 != l.0) || self.domains.len() < want {
                    chosen.push(l);
                }
            }
            let mut truth = BTreeSet::new();
            for l in &chosen {
                let ids = &by_leaf[l];
                let take = rng.gen_range(1..=ids.len().min(3));
                for id in ids.choose_multiple(&mut rng, take) {
                    truth.insert(id.clone());
                }
            }
            let topics: Vec<&str> = chosen.iter().map(|&(d, s)| self.subs[d][s].as_str()).collect();
            let text = format!("Request {j}: help with {}", topics.join(" and "));
            self.truth_by_text.insert(text.clone(), truth.clone());
            self.queries.push(QueryCase {
                id: format!("q{j:03}"),
                text,
                ground_truth: truth,
            });
        }
        self
    }

    pub fn registry(&self) -> Registry {
        Registry::new(self.services.clone()).unwrap()
    }

    /// The latent tree itself, built without any model calls.
    pub fn taxonomy(&self) -> Taxonomy {
        let mut t = Taxonomy::new("All services", "Every service in the registry");
        let mut leaf_ids = Vec::new();
        for (d, dn) in self.domains.iter().enumerate() {
            let did = t.add_child("root", dn, &format!("{dn} services"), "NOT here: other domains").unwrap();
            leaf_ids.push(
                self.subs[d]
                    .iter()
                    .map(|sn| t.add_child(&did, sn, &format!("{sn} services"), "NOT here: other topics").unwrap())
                    .collect::<Vec<_>>(),
            );
        }
        for s in &self.services {
            let (d, k) = self.latent[&s.id];
            t.assign(&s.id, &leaf_ids[d][k]).unwrap();
        }
        t
    }

    pub fn latent_path(&self, id: &str) -> Vec<String> {
        let (d, s) = self.latent[id];
        vec![self.domains[d].clone(), self.subs[d][s].clone()]
    }

    pub fn service_by_name(&self, name: &str) -> Option<&String> {
        self.by_name.get(name)
    }

    pub fn truth(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.truth_by_text.get(query)
    }

    /// Answers a prompt from the latent labels; `None` for anything unexpected.
    pub fn answer(&self, label: &str, req: &ChatRequest) -> Option<String> {
        let user = &req.user_prompt;
        match label {
            "keyword" => {
                let lines = numbered(user, "Services:");
                Some(
                    lines
                        .iter()
                        .map(|(n, text)| {
                            let id = self.by_name.get(&item_name(text))?;
                            let (d, s) = self.latent[id];
                            Some(format!(
                                "{n}: {}, {}",
                                self.domains[d].to_lowercase(),
                                self.subs[d][s].to_lowercase()
                            ))
                        })
                        .collect::<Option<Vec<_>>>()?
                        .join("\n"),
                )
            }
            "design" | "refine" => {
                let path = line_after(user, "Category path: ")?;
                let names: Vec<&String> = if path == "(root)" {
                    self.domains.iter().collect()
                } else {
                    let d = self.domains.iter().position(|x| *x == path)?;
                    self.subs[d].iter().collect()
                };
                let cats: Vec<_> = names
                    .iter()
                    .map(|n| {
                        json!({"name": n, "description": format!("{n} services"),
                               "boundary": "NOT here: the sibling categories", "axis": "functional-domain"})
                    })
                    .collect();
                Some(json!({"axis": "functional-domain", "categories": cats}).to_string())
            }
            "validate" => Some(r#"{"verdict": "ok"}"#.into()),
            "classify" | "placement" => {
                let path = line_after(user, "Category path: ")?;
                let id = self.by_name.get(&item_name(&line_after(user, "Service: ")?))?;
                let (d, s) = self.latent[id];
                let target = if path == "(root)" { &self.domains[d] } else { &self.subs[d][s] };
                let cats = numbered(user, "Categories:");
                Some(
                    cats.iter()
                        .find(|(_, t)| item_name(t) == *target)
                        .map_or("0".into(), |(n, _)| n.to_string()),
                )
            }
            "cross_domain" => Some("none".into()),
            "navigate" => {
                let query = line_after(user, "Query: ")?;
                let cats = numbered(user, "Categories:");
                let wanted: BTreeSet<(usize, usize)> = match query.strip_prefix("Service to place: ") {
                    Some(rest) => [self.latent[self.by_name.get(&item_name(rest))?]].into(),
                    None => self.truth(&query)?.iter().map(|id| self.latent[id]).collect(),
                };
                let picks: Vec<String> = cats
                    .iter()
                    .filter(|(_, t)| {
                        let name = item_name(t);
                        wanted
                            .iter()
                            .any(|&(d, s)| self.domains[d] == name || self.subs[d][s] == name)
                    })
                    .map(|(n, _)| n.to_string())
                    .collect();
                Some(if picks.is_empty() { "0".into() } else { picks.join(", ") })
            }
            "select" => {
                let truth = self.truth(&line_after(user, "Query: ")?)?;
                let picks: Vec<String> = numbered(user, "Services:")
                    .iter()
                    .filter(|(_, t)| self.by_name.get(&item_name(t)).is_some_and(|id| truth.contains(id)))
                    .map(|(n, _)| n.to_string())
                    .collect();
                Some(if picks.is_empty() { "0".into() } else { picks.join(", ") })
            }
            _ => None,
        }
    }

    pub fn chat(self: &Arc<Self>) -> Arc<ScriptedChat> {
        let w = Arc::clone(self);
        Arc::new(ScriptedChat::new().oracle(move |label, req| w.answer(label, req)).record_prompts())
    }
}

pub fn gateway_config() -> GatewayConfig {
    GatewayConfig {
        backoff_ms: 0,
        ..Default::default()
    }
}

pub fn gateway(chat: Arc<ScriptedChat>) -> Gateway {
    Gateway::new(chat, gateway_config())
}

/// Text of the line starting with `prefix`.
pub fn line_after(text: &str, prefix: &str) -> Option<String> {
    text.lines().find_map(|l| l.strip_prefix(prefix)).map(|s| s.trim().to_owned())
}

/// `(n, rest)` for each `n. rest` line in the block following `heading`.
pub fn numbered(text: &str, heading: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut inside = false;
    for l in text.lines() {
        if !inside {
            inside = l.trim() == heading;
            continue;
        }
        if l.trim().is_empty() {
            if out.is_empty() {
                continue;
            }
            break;
        }
        if let Some((n, rest)) = l.split_once(". ") {
            if let Ok(n) = n.trim().parse() {
                out.push((n, rest.to_owned()));
            }
        }
    }
    out
}

/// Name part of `name: description (NOT: ...)`.
pub fn item_name(text: &str) -> String {
    let end = [text.find(": "), text.find(" (NOT:")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(text.len());
    text[..end].trim().to_owned()
}
