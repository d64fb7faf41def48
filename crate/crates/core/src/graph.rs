//! Typed skill relations, redundancy detection and composition plans.
//!
//! `a IsSubsetOf b` means `b` covers everything `a` does. `a
//! RequiresOutputFrom b` means `b` must run before `a`. Each relation kind
//! is kept acyclic on its own.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identify::{similarity_or_zero, EmbeddingProvider, IdentifyError};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    IsSubsetOf,
    RequiresOutputFrom,
}

impl RelationKind {
    pub const ALL: [RelationKind; 2] = [RelationKind::IsSubsetOf, RelationKind::RequiresOutputFrom];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub relation: RelationKind,
    pub to: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` cannot relate to itself")]
    SelfEdge(String),
    #[error("relation would close a cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("edge already present")]
    DuplicateEdge,
    #[error("goal `{0}` is not in the graph")]
    UnknownGoal(String),
    #[error("node `{0}` is not registered")]
    UnregisteredNode(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
}

impl From<IdentifyError> for GraphError {
    fn from(e: IdentifyError) -> Self {
        GraphError::Embedding(e.to_string())
    }
}

/// Immutable graph value; updates return a new graph and share storage
/// until written.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillGraph {
    nodes: Arc<BTreeSet<String>>,
    edges: Arc<BTreeSet<Edge>>,
}

impl SkillGraph {
    pub fn new() -> Self {
        SkillGraph::default()
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn with_node(&self, id: impl Into<String>) -> Self {
        let mut g = self.clone();
        Arc::make_mut(&mut g.nodes).insert(id.into());
        g
    }

    fn successors<'a>(&'a self, node: &'a str, kind: RelationKind) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .range(
                Edge {
                    from: node.to_string(),
                    relation: kind,
                    to: String::new(),
                }..,
            )
            .take_while(move |e| e.from == node && e.relation == kind)
            .map(|e| e.to.as_str())
    }

    /// Shortest path `start ..= goal` along `kind` edges, if any.
    fn path(&self, start: &str, goal: &str, kind: RelationKind) -> Option<Vec<String>> {
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([start]);
        let mut seen = BTreeSet::from([start]);
        while let Some(n) = queue.pop_front() {
            if n == goal {
                let mut path = vec![n.to_string()];
                let mut cur = n;
                while let Some(p) = parent.get(cur) {
                    path.push(p.to_string());
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for s in self.successors(n, kind) {
                if seen.insert(s) {
                    parent.insert(s, n);
                    queue.push_back(s);
                }
            }
        }
        None
    }

    fn reachable(&self, start: &str, kind: RelationKind) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start.to_string()];
        while let Some(n) = stack.pop() {
            for s in self.successors(&n, kind) {
                if seen.insert(s.to_string()) {
                    stack.push(s.to_string());
                }
            }
        }
        seen
    }

    /// Add `from kind to`, rejecting edges that would close a cycle of the
    /// same kind. The witness path starts and ends at `from`.
    pub fn with_relation(&self, from: &str, kind: RelationKind, to: &str) -> Result<Self, GraphError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(GraphError::UnknownNode(id.to_string()));
            }
        }
        if from == to {
            return Err(GraphError::SelfEdge(from.to_string()));
        }
        let edge = Edge {
            from: from.to_string(),
            relation: kind,
            to: to.to_string(),
        };
        if self.edges.contains(&edge) {
            return Err(GraphError::DuplicateEdge);
        }
        if let Some(back) = self.path(to, from, kind) {
            let mut witness = vec![from.to_string()];
            witness.extend(back);
            return Err(GraphError::CycleDetected(witness));
        }
        let mut g = self.clone();
        Arc::make_mut(&mut g.edges).insert(edge);
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn add_relation(graph: &SkillGraph, from: &str, kind: RelationKind, to: &str) -> Result<SkillGraph, GraphError> {
    graph.with_relation(from, kind, to)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphFindingCode {
    UnknownNode,
    SelfEdge,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFinding {
    pub code: GraphFindingCode,
    pub detail: String,
}

fn find_cycle(graph: &SkillGraph, kind: RelationKind) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
    for root in graph.nodes.iter() {
        if marks.contains_key(root.as_str()) {
            continue;
        }
        let mut stack: Vec<(&str, Vec<&str>)> = vec![(root, graph.successors(root, kind).collect())];
        marks.insert(root, Mark::Open);
        while let Some((node, pending)) = stack.last_mut() {
            let node = *node;
            match pending.pop() {
                Some(next) => match marks.get(next) {
                    Some(Mark::Open) => {
                        let start = stack
                            .iter()
                            .position(|(n, _)| *n == next)
                            .expect("open node is on stack");
                        let mut cycle: Vec<String> = stack[start..].iter().map(|(n, _)| n.to_string()).collect();
                        cycle.push(next.to_string());
                        return Some(cycle);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(next, Mark::Open);
                        stack.push((next, graph.successors(next, kind).collect()));
                    }
                },
                None => {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
    None
}

/// Re-check endpoint membership, self-edges and per-kind acyclicity.
pub fn validate_graph(graph: &SkillGraph) -> Vec<GraphFinding> {
    let mut out = Vec::new();
    for e in graph.edges.iter() {
        for id in [&e.from, &e.to] {
            if !graph.contains(id) {
                out.push(GraphFinding {
                    code: GraphFindingCode::UnknownNode,
                    detail: format!("edge {} {:?} {} references `{id}`", e.from, e.relation, e.to),
                });
            }
        }
        if e.from == e.to {
            out.push(GraphFinding {
                code: GraphFindingCode::SelfEdge,
                detail: e.from.clone(),
            });
        }
    }
    for kind in RelationKind::ALL {
        if let Some(cycle) = find_cycle(graph, kind) {
            out.push(GraphFinding {
                code: GraphFindingCode::Cycle,
                detail: format!("{kind:?}: {}", cycle.join(" -> ")),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAccounting {
    pub goals: usize,
    /// Goals plus their full dependency closure, before subsumption.
    pub closure_steps: usize,
    pub subsumed: Vec<String>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub steps: Vec<String>,
    pub accounting: PlanAccounting,
}

impl CompositionPlan {
    /// Every RequiresOutputFrom edge inside the plan points backwards.
    pub fn respects(&self, graph: &SkillGraph) -> bool {
        let pos: BTreeMap<&str, usize> = self.steps.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        graph
            .edges
            .iter()
            .filter(|e| e.relation == RelationKind::RequiresOutputFrom)
            .all(|e| match (pos.get(e.from.as_str()), pos.get(e.to.as_str())) {
                (Some(a), Some(b)) => b < a,
                _ => true,
            })
    }
}

fn drop_subsumed(graph: &SkillGraph, set: &BTreeSet<String>) -> BTreeMap<String, String> {
    let mut covered_by = BTreeMap::new();
    for n in set {
        let supersets = graph.reachable(n, RelationKind::IsSubsetOf);
        if let Some(sup) = supersets.iter().filter(|s| set.contains(*s)).max_by_key(|s| {
            // Prefer the outermost superset.
            (
                Reverse(
                    graph
                        .reachable(s, RelationKind::IsSubsetOf)
                        .iter()
                        .filter(|t| set.contains(*t))
                        .count(),
                ),
                (*s).clone(),
            )
        }) {
            covered_by.insert(n.clone(), sup.clone());
        }
    }
    covered_by
}

fn closure(graph: &SkillGraph, roots: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = roots.clone();
    for r in roots {
        out.extend(graph.reachable(r, RelationKind::RequiresOutputFrom));
    }
    out
}

/// Kahn's algorithm over `nodes`, smallest ready id first. `before` holds
/// (earlier, later) pairs.
fn topo_order(nodes: &BTreeSet<String>, before: &BTreeSet<(String, String)>) -> Option<Vec<String>> {
    let mut indegree: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    let mut out_edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in before {
        *indegree.get_mut(b.as_str())? += 1;
        out_edges.entry(a.as_str()).or_default().push(b.as_str());
    }
    let mut ready: BinaryHeap<Reverse<&str>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| Reverse(*n))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse(n)) = ready.pop() {
        order.push(n.to_string());
        for m in out_edges.get(n).into_iter().flatten() {
            let d = indegree.get_mut(m).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(m));
            }
        }
    }
    (order.len() == nodes.len()).then_some(order)
}

/// Goals plus their RequiresOutputFrom closure in dependency order, minus
/// skills subsumed by another planned skill.
pub fn compose_plan(graph: &SkillGraph, goals: &BTreeSet<String>) -> Result<CompositionPlan, GraphError> {
    if let Some(g) = goals.iter().find(|g| !graph.contains(g)) {
        return Err(GraphError::UnknownGoal(g.clone()));
    }
    let full = closure(graph, goals);
    let goal_drops = drop_subsumed(graph, goals);
    let kept_goals: BTreeSet<String> = goals.iter().filter(|g| !goal_drops.contains_key(*g)).cloned().collect();
    let planned = closure(graph, &kept_goals);

    let order_for = |dropped: &BTreeMap<String, String>| -> Option<Vec<String>> {
        let nodes: BTreeSet<String> = planned.iter().filter(|n| !dropped.contains_key(*n)).cloned().collect();
        let mut before = BTreeSet::new();
        for e in graph
            .edges
            .iter()
            .filter(|e| e.relation == RelationKind::RequiresOutputFrom)
        {
            if !planned.contains(&e.from) || !planned.contains(&e.to) || dropped.contains_key(&e.from) {
                continue;
            }
            // A dropped dependency is provided by the skill that covers it.
            let provider = dropped.get(&e.to).unwrap_or(&e.to);
            if provider != &e.from {
                before.insert((provider.clone(), e.from.clone()));
            }
        }
        topo_order(&nodes, &before)
    };

    let mut subsumed = goal_drops;
    let inner = drop_subsumed(graph, &planned);
    let steps = match order_for(&inner) {
        Some(steps) => {
            subsumed.extend(inner);
            steps
        }
        None => order_for(&BTreeMap::new()).expect("RequiresOutputFrom is acyclic"),
    };
    Ok(CompositionPlan {
        accounting: PlanAccounting {
            goals: goals.len(),
            closure_steps: full.len(),
            subsumed: subsumed.into_keys().collect(),
            steps: steps.len(),
        },
        steps,
    })
}

/// Text used to compare skills for redundancy.
pub trait SkillLookup {
    fn metadata_text(&self, skill_id: &str) -> Option<String>;
}

impl SkillLookup for Registry {
    fn metadata_text(&self, skill_id: &str) -> Option<String> {
        self.get(skill_id).map(|r| r.artifact.frontmatter.metadata_text())
    }
}

impl SkillLookup for BTreeMap<String, String> {
    fn metadata_text(&self, skill_id: &str) -> Option<String> {
        self.get(skill_id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundantPair {
    pub a: String,
    pub b: String,
    pub similarity: f64,
}

pub const DEFAULT_REDUNDANCY_THRESHOLD: f64 = 0.9;

/// Pairs of nodes whose metadata embeddings have cosine ≥ `threshold`,
/// with `a < b`, by similarity descending then ids.
pub fn detect_redundancy(
    graph: &SkillGraph,
    lookup: &dyn SkillLookup,
    threshold: f64,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<RedundantPair>, GraphError> {
    let mut embedded = Vec::with_capacity(graph.nodes.len());
    for id in graph.nodes.iter() {
        let text = lookup
            .metadata_text(id)
            .ok_or_else(|| GraphError::UnregisteredNode(id.clone()))?;
        embedded.push((id, embedder.embed(&text)?));
    }
    let mut out = Vec::new();
    for (i, (a, ea)) in embedded.iter().enumerate() {
        for (b, eb) in &embedded[i + 1..] {
            let s = similarity_or_zero(ea, eb)?;
            if s >= threshold {
                out.push(RedundantPair {
                    a: a.to_string(),
                    b: b.to_string(),
                    similarity: s,
                });
            }
        }
    }
    out.sort_by(|x, y| {
        y.similarity
            .total_cmp(&x.similarity)
            .then_with(|| x.a.cmp(&y.a))
            .then_with(|| x.b.cmp(&y.b))
    });
    Ok(out)
}
