//! The category tree and its leaf-level service assignments.
//!
//! Categories form a tree; a service may sit under several leaves. The
//! multi-parent relation lives only in leaf service lists and in the
//! `assignment` map (primary leaf first), so traversal stays a tree walk.
//!
//! On disk a taxonomy is two files: `taxonomy.json` with the node list and
//! `class.json` mapping each service id to its leaves.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::registry::Registry;

pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const CLASS_FILE: &str = "class.json";
pub const ROOT_ID: &str = "root";

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in {path}: {message}")]
    Schema { path: String, message: String },
    #[error("inconsistent taxonomy: {0}")]
    Inconsistent(String),
    #[error("unknown node id \"{0}\"")]
    UnknownNode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// What this category does not cover.
    #[serde(default)]
    pub boundary: String,
    #[serde(default)]
    pub children: Vec<String>,
    pub depth: usize,
    #[serde(default, rename = "services", skip_serializing_if = "Vec::is_empty")]
    pub service_ids: Vec<String>,
}

impl TaxonomyNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    root: String,
    nodes: IndexMap<String, TaxonomyNode>,
    assignment: BTreeMap<String, Vec<String>>,
    parent: HashMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyStats {
    pub total_categories: usize,
    pub leaf_categories: usize,
    pub max_depth: usize,
    pub avg_services_per_leaf: f64,
    pub branching_min: Option<usize>,
    pub branching_mean: Option<f64>,
    pub branching_max: Option<usize>,
    /// Distinct services with at least one leaf.
    pub assigned_services: usize,
    /// Services placed under more than one leaf.
    pub multi_parent_services: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Uncovered { service: String },
    OverDepth { node: String, depth: usize },
    DanglingService { leaf: String, service: String },
    DuplicateInLeaf { leaf: String, service: String },
    ServicesOnInternalNode { node: String },
    AssignmentMismatch { service: String, leaf: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn uncovered(&self) -> impl Iterator<Item = &str> {
        self.violations.iter().filter_map(|v| match v {
            Violation::Uncovered { service } => Some(service.as_str()),
            _ => None,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    root: String,
    nodes: Vec<TaxonomyNode>,
}

pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    let mut dash = false;
    for c in name.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("category");
    }
    out
}

impl Taxonomy {
    pub fn new(root_name: &str, root_description: &str) -> Self {
        let mut nodes = IndexMap::new();
        nodes.insert(
            ROOT_ID.to_owned(),
            TaxonomyNode {
                id: ROOT_ID.to_owned(),
                name: root_name.to_owned(),
                description: root_description.to_owned(),
                boundary: String::new(),
                children: Vec::new(),
                depth: 0,
                service_ids: Vec::new(),
            },
        );
        Taxonomy {
            root: ROOT_ID.to_owned(),
            nodes,
            assignment: BTreeMap::new(),
            parent: HashMap::new(),
        }
    }

    /// Reassembles a taxonomy from its parts, checking the tree structure and
    /// that `assignment` agrees with leaf service lists.
    pub fn from_parts(
        root: String,
        nodes: Vec<TaxonomyNode>,
        assignment: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, TaxonomyError> {
        let mut map = IndexMap::with_capacity(nodes.len());
        for n in nodes {
            let id = n.id.clone();
            if map.insert(id.clone(), n).is_some() {
                return Err(TaxonomyError::Inconsistent(format!("duplicate node id \"{id}\"")));
            }
        }
        let root_node = map.get(&root).ok_or_else(|| TaxonomyError::UnknownNode(root.clone()))?;
        if root_node.depth != 0 {
            return Err(TaxonomyError::Inconsistent("root depth must be 0".into()));
        }
        let mut parent = HashMap::new();
        let mut seen = HashSet::from([root.clone()]);
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(id) = queue.pop_front() {
            let node = &map[&id];
            for c in &node.children {
                let child = map.get(c).ok_or_else(|| TaxonomyError::UnknownNode(c.clone()))?;
                if !seen.insert(c.clone()) {
                    return Err(TaxonomyError::Inconsistent(format!("node \"{c}\" is reachable twice")));
                }
                if child.depth != node.depth + 1 {
                    return Err(TaxonomyError::Inconsistent(format!(
                        "node \"{c}\" has depth {} under a depth-{} parent",
                        child.depth, node.depth
                    )));
                }
                parent.insert(c.clone(), id.clone());
                queue.push_back(c.clone());
            }
        }
        if let Some(orphan) = map.keys().find(|k| !seen.contains(*k)) {
            return Err(TaxonomyError::Inconsistent(format!("node \"{orphan}\" is not reachable from the root")));
        }
        for (service, leaves) in &assignment {
            for leaf in leaves {
                let node = map.get(leaf).ok_or_else(|| {
                    TaxonomyError::Inconsistent(format!("service \"{service}\" is assigned to unknown leaf \"{leaf}\""))
                })?;
                if !node.is_leaf() {
                    return Err(TaxonomyError::Inconsistent(format!(
                        "service \"{service}\" is assigned to internal node \"{leaf}\""
                    )));
                }
                if !node.service_ids.contains(service) {
                    return Err(TaxonomyError::Inconsistent(format!(
                        "class file puts \"{service}\" in \"{leaf}\" but the leaf does not list it"
                    )));
                }
            }
        }
        for node in map.values() {
            for s in &node.service_ids {
                if !assignment.get(s).is_some_and(|l| l.contains(&node.id)) {
                    return Err(TaxonomyError::Inconsistent(format!(
                        "leaf \"{}\" lists \"{s}\" but the class file does not",
                        node.id
                    )));
                }
            }
        }
        Ok(Taxonomy {
            root,
            nodes: map,
            assignment,
            parent,
        })
    }

    pub fn root_id(&self) -> &str {
        &self.root
    }

    pub fn root(&self) -> &TaxonomyNode {
        &self.nodes[&self.root]
    }

    pub fn node(&self, id: &str) -> Option<&TaxonomyNode> {
        self.nodes.get(id)
    }

    fn require(&self, id: &str) -> Result<&TaxonomyNode, TaxonomyError> {
        self.nodes.get(id).ok_or_else(|| TaxonomyError::UnknownNode(id.to_owned()))
    }

    /// All nodes in insertion order (breadth-first for built taxonomies).
    pub fn nodes(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: &str) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes
            .get(id)
            .into_iter()
            .flat_map(|n| n.children.iter())
            .map(|c| &self.nodes[c])
    }

    pub fn parent(&self, id: &str) -> Option<&str> {
        self.parent.get(id).map(String::as_str)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values().filter(|n| n.is_leaf())
    }

    pub fn assignment(&self) -> &BTreeMap<String, Vec<String>> {
        &self.assignment
    }

    pub fn leaves_of(&self, service: &str) -> &[String] {
        self.assignment.get(service).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Ancestor at depth 1 (the top-level domain), or `None` for the root.
    pub fn top_level_of(&self, id: &str) -> Option<&str> {
        let mut cur = self.nodes.get_key_value(id)?.0.as_str();
        loop {
            let p = self.parent(cur)?;
            if p == self.root {
                return Some(cur);
            }
            cur = p;
        }
    }

    /// Names from the first level down to `id`, root excluded.
    pub fn path_names(&self, id: &str) -> Vec<&str> {
        let mut names = Vec::new();
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            names.push(self.nodes[cur].name.as_str());
            cur = p;
        }
        names.reverse();
        names
    }

    fn unique_child_id(&self, parent: &str, name: &str) -> String {
        let base = if parent == self.root {
            format!("{}/{}", self.root, slugify(name))
        } else {
            format!("{parent}/{}", slugify(name))
        };
        if !self.nodes.contains_key(&base) {
            return base;
        }
        (2..)
            .map(|i| format!("{base}-{i}"))
            .find(|c| !self.nodes.contains_key(c))
            .unwrap()
    }

    /// Appends a child category and returns its id (a path slug).
    pub fn add_child(
        &mut self,
        parent: &str,
        name: &str,
        description: &str,
        boundary: &str,
    ) -> Result<String, TaxonomyError> {
        let depth = self.require(parent)?.depth + 1;
        if !self.nodes[parent].service_ids.is_empty() {
            return Err(TaxonomyError::Inconsistent(format!(
                "cannot add a child under \"{parent}\", which already holds services"
            )));
        }
        let id = self.unique_child_id(parent, name);
        self.nodes.insert(
            id.clone(),
            TaxonomyNode {
                id: id.clone(),
                name: name.to_owned(),
                description: description.to_owned(),
                boundary: boundary.to_owned(),
                children: Vec::new(),
                depth,
                service_ids: Vec::new(),
            },
        );
        self.nodes[parent].children.push(id.clone());
        self.parent.insert(id.clone(), parent.to_owned());
        Ok(id)
    }

    /// Places `service` in `leaf`. Returns `false` if it was already there.
    pub fn assign(&mut self, service: &str, leaf: &str) -> Result<bool, TaxonomyError> {
        let node = self.nodes.get_mut(leaf).ok_or_else(|| TaxonomyError::UnknownNode(leaf.to_owned()))?;
        if !node.children.is_empty() {
            return Err(TaxonomyError::Inconsistent(format!("\"{leaf}\" is not a leaf")));
        }
        if node.service_ids.iter().any(|s| s == service) {
            return Ok(false);
        }
        node.service_ids.push(service.to_owned());
        self.assignment.entry(service.to_owned()).or_default().push(leaf.to_owned());
        Ok(true)
    }

    /// Drops leaves without services, repeatedly, so no empty subtree remains.
    /// The root is never removed.
    pub fn prune_empty_leaves(&mut self) -> usize {
        let mut removed = 0;
        loop {
            let empty: Vec<String> = self
                .nodes
                .values()
                .filter(|n| n.id != self.root && n.is_leaf() && n.service_ids.is_empty())
                .map(|n| n.id.clone())
                .collect();
            if empty.is_empty() {
                return removed;
            }
            for id in empty {
                if let Some(p) = self.parent.remove(&id) {
                    self.nodes[&p].children.retain(|c| c != &id);
                }
                self.nodes.shift_remove(&id);
                removed += 1;
            }
        }
    }

    /// Tree path length between two nodes: `depth(a) + depth(b) - 2 * depth(lca)`.
    pub fn lca_distance(&self, a: &str, b: &str) -> Result<usize, TaxonomyError> {
        let da = self.require(a)?.depth;
        let db = self.require(b)?.depth;
        let mut ancestors = HashSet::new();
        let mut cur = a;
        ancestors.insert(cur);
        while let Some(p) = self.parent(cur) {
            ancestors.insert(p);
            cur = p;
        }
        let mut cur = b;
        while !ancestors.contains(cur) {
            cur = self
                .parent(cur)
                .ok_or_else(|| TaxonomyError::Inconsistent(format!("\"{b}\" is not connected to the root")))?;
        }
        let dl = self.nodes[cur].depth;
        Ok(da + db - 2 * dl)
    }

    pub fn stats(&self) -> TaxonomyStats {
        let leaves: Vec<&TaxonomyNode> = self.leaves().collect();
        let leaf_total: usize = leaves.iter().map(|l| l.service_ids.len()).sum();
        let branching: Vec<usize> = self
            .nodes
            .values()
            .filter(|n| !n.is_leaf())
            .map(|n| n.children.len())
            .collect();
        TaxonomyStats {
            total_categories: self.nodes.len(),
            leaf_categories: leaves.len(),
            max_depth: self.nodes.values().map(|n| n.depth).max().unwrap_or(0),
            avg_services_per_leaf: if leaves.is_empty() {
                0.0
            } else {
                leaf_total as f64 / leaves.len() as f64
            },
            branching_min: branching.iter().min().copied(),
            branching_mean: (!branching.is_empty())
                .then(|| branching.iter().sum::<usize>() as f64 / branching.len() as f64),
            branching_max: branching.iter().max().copied(),
            assigned_services: self.assignment.values().filter(|l| !l.is_empty()).count(),
            multi_parent_services: self.assignment.values().filter(|l| l.len() > 1).count(),
        }
    }

    pub fn validate(&self, registry: &Registry, max_depth: usize) -> ValidationReport {
        let mut violations = Vec::new();
        for s in registry.ids() {
            if self.leaves_of(s).is_empty() {
                violations.push(Violation::Uncovered { service: s.to_owned() });
            }
        }
        for node in self.nodes.values() {
            if node.depth > max_depth {
                violations.push(Violation::OverDepth {
                    node: node.id.clone(),
                    depth: node.depth,
                });
            }
            if !node.is_leaf() && !node.service_ids.is_empty() {
                violations.push(Violation::ServicesOnInternalNode { node: node.id.clone() });
            }
            let mut seen = HashSet::new();
            for s in &node.service_ids {
                if !registry.contains(s) {
                    violations.push(Violation::DanglingService {
                        leaf: node.id.clone(),
                        service: s.clone(),
                    });
                }
                if !seen.insert(s) {
                    violations.push(Violation::DuplicateInLeaf {
                        leaf: node.id.clone(),
                        service: s.clone(),
                    });
                }
            }
        }
        for (s, leaves) in &self.assignment {
            for leaf in leaves {
                if !self.nodes.get(leaf).is_some_and(|n| n.service_ids.contains(s)) {
                    violations.push(Violation::AssignmentMismatch {
                        service: s.clone(),
                        leaf: leaf.clone(),
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    pub fn to_json(&self) -> String {
        let file = TaxonomyFile {
            root: self.root.clone(),
            nodes: self.nodes.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("taxonomy serializes");
        s.push('\n');
        s
    }

    pub fn class_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.assignment).expect("assignment serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), TaxonomyError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| TaxonomyError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let t = dir.join(TAXONOMY_FILE);
        fs::write(&t, self.to_json()).map_err(io(&t))?;
        let c = dir.join(CLASS_FILE);
        fs::write(&c, self.class_json()).map_err(io(&c))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| TaxonomyError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let t_text = read(TAXONOMY_FILE)?;
        let c_text = read(CLASS_FILE)?;
        let schema = |name: &str| {
            let path = dir.join(name).display().to_string();
            move |e: serde_json::Error| TaxonomyError::Schema {
                path,
                message: e.to_string(),
            }
        };
        let file: TaxonomyFile = serde_json::from_str(&t_text).map_err(schema(TAXONOMY_FILE))?;
        let assignment: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&c_text).map_err(schema(CLASS_FILE))?;
        Self::from_files(file.root, file.nodes, assignment)
    }

    /// Builds from parsed files. When `taxonomy.json` carries no leaf service
    /// lists they are rebuilt from the class map.
    fn from_files(
        root: String,
        mut nodes: Vec<TaxonomyNode>,
        assignment: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, TaxonomyError> {
        if nodes.iter().all(|n| n.service_ids.is_empty()) {
            let mut index: HashMap<String, usize> = HashMap::new();
            for (i, n) in nodes.iter().enumerate() {
                index.insert(n.id.clone(), i);
            }
            for (s, leaves) in &assignment {
                for leaf in leaves {
                    let i = *index.get(leaf).ok_or_else(|| {
                        TaxonomyError::Inconsistent(format!("service \"{s}\" is assigned to unknown leaf \"{leaf}\""))
                    })?;
                    if !nodes[i].service_ids.contains(s) {
                        nodes[i].service_ids.push(s.clone());
                    }
                }
            }
        }
        Self::from_parts(root, nodes, assignment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Service;
    use proptest::prelude::*;

    fn three_node() -> Taxonomy {
        let mut t = Taxonomy::new("All services", "");
        let a = t.add_child(ROOT_ID, "Travel", "trips", "not payments").unwrap();
        let b = t.add_child(ROOT_ID, "Finance", "money", "not travel").unwrap();
        t.assign("s1", &a).unwrap();
        t.assign("s2", &a).unwrap();
        t.assign("s2", &b).unwrap();
        t
    }

    fn registry(ids: &[&str]) -> Registry {
        Registry::new(ids.iter().map(|i| Service::new(*i, *i, "d")).collect()).unwrap()
    }

    #[test]
    fn ids_are_path_slugs_and_unique() {
        let mut t = Taxonomy::new("r", "");
        let a = t.add_child(ROOT_ID, "Travel & Tourism", "", "").unwrap();
        let b = t.add_child(ROOT_ID, "Travel   Tourism", "", "").unwrap();
        let c = t.add_child(&a, "Flights", "", "").unwrap();
        assert_eq!(a, "root/travel-tourism");
        assert_eq!(b, "root/travel-tourism-2");
        assert_eq!(c, "root/travel-tourism/flights");
        assert_eq!(t.node(&c).unwrap().depth, 2);
        assert_eq!(t.top_level_of(&c), Some(a.as_str()));
        assert_eq!(t.path_names(&c), ["Travel & Tourism", "Flights"]);
    }

    #[test]
    fn lca_identity_and_siblings() {
        let mut t = Taxonomy::new("r", "");
        let a = t.add_child(ROOT_ID, "a", "", "").unwrap();
        let a1 = t.add_child(&a, "a1", "", "").unwrap();
        let a2 = t.add_child(&a, "a2", "", "").unwrap();
        let b = t.add_child(ROOT_ID, "b", "", "").unwrap();
        assert_eq!(t.lca_distance(&a1, &a1).unwrap(), 0);
        assert_eq!(t.lca_distance(&a1, &a2).unwrap(), 2);
        assert_eq!(t.lca_distance(&a1, &b).unwrap(), 3);
        assert_eq!(t.lca_distance(ROOT_ID, &a2).unwrap(), 2);
        assert!(matches!(t.lca_distance(&a1, "nope"), Err(TaxonomyError::UnknownNode(_))));
    }

    #[test]
    fn assign_is_idempotent_per_leaf() {
        let mut t = three_node();
        assert!(!t.assign("s1", "root/travel").unwrap());
        assert_eq!(t.leaves_of("s2"), ["root/travel", "root/finance"]);
        assert!(t.assign("s1", ROOT_ID).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let t = three_node();
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        let back = Taxonomy::load(dir.path()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.node("root/finance").unwrap().boundary, "not travel");
    }

    #[test]
    fn load_without_leaf_lists_uses_class_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(TAXONOMY_FILE),
            r#"{"root":"r","nodes":[{"id":"r","name":"R","children":["r/x"],"depth":0},
                {"id":"r/x","name":"X","description":"","boundary":"","children":[],"depth":1}]}"#,
        )
        .unwrap();
        fs::write(dir.path().join(CLASS_FILE), r#"{"s1":["r/x"]}"#).unwrap();
        let t = Taxonomy::load(dir.path()).unwrap();
        assert_eq!(t.node("r/x").unwrap().service_ids, ["s1"]);
    }

    #[test]
    fn class_file_with_missing_leaf_is_inconsistent() {
        let t = three_node();
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        fs::write(dir.path().join(CLASS_FILE), r#"{"s1":["root/travel","root/nowhere"]}"#).unwrap();
        let err = Taxonomy::load(dir.path()).unwrap_err();
        assert!(matches!(err, TaxonomyError::Inconsistent(_)), "{err}");
    }

    #[test]
    fn schema_error_names_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TAXONOMY_FILE), r#"{"root": 3}"#).unwrap();
        fs::write(dir.path().join(CLASS_FILE), "{}").unwrap();
        match Taxonomy::load(dir.path()).unwrap_err() {
            TaxonomyError::Schema { path, .. } => assert!(path.ends_with(TAXONOMY_FILE)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn stats_root_only_and_two_leaves() {
        let mut t = Taxonomy::new("r", "");
        for s in ["a", "b", "c", "d", "e"] {
            t.assign(s, ROOT_ID).unwrap();
        }
        let s = t.stats();
        assert_eq!((s.total_categories, s.leaf_categories, s.max_depth), (1, 1, 0));
        assert_eq!(s.avg_services_per_leaf, 5.0);
        assert_eq!(s.branching_mean, None);

        let mut t = Taxonomy::new("r", "");
        let x = t.add_child(ROOT_ID, "x", "", "").unwrap();
        let y = t.add_child(ROOT_ID, "y", "", "").unwrap();
        for s in ["a", "b", "c"] {
            t.assign(s, &x).unwrap();
        }
        for s in ["d", "e", "f", "g", "h"] {
            t.assign(s, &y).unwrap();
        }
        let s = t.stats();
        assert_eq!(s.avg_services_per_leaf, 4.0);
        assert_eq!((s.branching_min, s.branching_max), (Some(2), Some(2)));
    }

    #[test]
    fn validation_report() {
        let t = three_node();
        assert!(t.validate(&registry(&["s1", "s2"]), 3).is_ok());

        let report = t.validate(&registry(&["s1", "s2", "s3"]), 3);
        assert_eq!(report.uncovered().collect::<Vec<_>>(), ["s3"]);

        let report = t.validate(&registry(&["s1", "s2"]), 0);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::OverDepth { depth: 1, .. })));

        let report = t.validate(&registry(&["s1"]), 3);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DanglingService { service, .. } if service == "s2")));
    }

    #[test]
    fn prune_removes_empty_subtrees() {
        let mut t = three_node();
        let empty = t.add_child(ROOT_ID, "Empty", "", "").unwrap();
        t.add_child(&empty, "Deeper", "", "").unwrap();
        assert_eq!(t.prune_empty_leaves(), 2);
        assert_eq!(t.root().children.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        assert_eq!(Taxonomy::load(dir.path()).unwrap(), t);
    }

    /// Random tree over `n` nodes: node `i > 0` hangs under `parents[i - 1] % i`.
    fn random_tree(parents: &[usize]) -> (Taxonomy, Vec<String>, Vec<Vec<usize>>) {
        let n = parents.len() + 1;
        let mut t = Taxonomy::new("r", "");
        let mut ids = vec![ROOT_ID.to_owned()];
        let mut adj = vec![Vec::new(); n];
        for i in 1..n {
            let p = parents[i - 1] % i;
            let id = t.add_child(&ids[p].clone(), &format!("n{i}"), "", "").unwrap();
            ids.push(id);
            adj[p].push(i);
            adj[i].push(p);
        }
        (t, ids, adj)
    }

    fn bfs_distance(adj: &[Vec<usize>], a: usize, b: usize) -> usize {
        let mut dist = vec![usize::MAX; adj.len()];
        dist[a] = 0;
        let mut q = VecDeque::from([a]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        dist[b]
    }

    proptest! {
        #[test]
        fn lca_matches_bfs_path_oracle(parents in proptest::collection::vec(0usize..1000, 29)) {
            let (t, ids, adj) = random_tree(&parents);
            for a in 0..ids.len() {
                for b in 0..ids.len() {
                    prop_assert_eq!(t.lca_distance(&ids[a], &ids[b]).unwrap(), bfs_distance(&adj, a, b));
                }
            }
        }

        #[test]
        fn lca_is_a_metric(parents in proptest::collection::vec(0usize..1000, 1..20), picks in proptest::collection::vec(0usize..100, 3)) {
            let (t, ids, _) = random_tree(&parents);
            let [a, b, c] = [picks[0] % ids.len(), picks[1] % ids.len(), picks[2] % ids.len()];
            let d = |x: usize, y: usize| t.lca_distance(&ids[x], &ids[y]).unwrap();
            prop_assert_eq!(d(a, b), d(b, a));
            prop_assert_eq!(d(a, b) == 0, a == b);
            prop_assert!(d(a, c) <= d(a, b) + d(b, c));
        }
    }
}
