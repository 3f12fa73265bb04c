//! Declarative attack-pattern graphs and their alignment against the event
//! stream: candidate nodes are matched on type and feature predicates, then
//! pattern edges are embedded as time-ordered event paths found by
//! depth-first search under a node-expansion budget.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_graph::{EventStream, NodeId};

pub const DEFAULT_MAX_HOPS: usize = 3;

/// A single feature constraint; a pattern node's predicate is the
/// conjunction of its constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    AttrEquals { attr: String, value: String },
    AttrOneOf { attr: String, values: Vec<String> },
    IdRegex(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternNode {
    pub pid: String,
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(default, rename = "where")]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternEdge {
    pub from: String,
    pub to: String,
    pub edge_type: String,
    /// Longest admissible event path realizing this edge. The final hop must
    /// carry `edge_type`; earlier hops are unconstrained reachability.
    #[serde(default = "default_max_hops")]
    pub max_hops: usize,
}

fn default_max_hops() -> usize {
    DEFAULT_MAX_HOPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPattern {
    pub nodes: Vec<PatternNode>,
    #[serde(default)]
    pub edges: Vec<PatternEdge>,
}

impl AttackPattern {
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidPattern("pattern has no nodes".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(&n.pid) {
                return Err(Error::InvalidPattern(format!("duplicate pid `{}`", n.pid)));
            }
            for c in &n.constraints {
                if let Constraint::IdRegex(re) = c {
                    Regex::new(re).map_err(|e| {
                        Error::InvalidPattern(format!("pid `{}`: bad regex: {e}", n.pid))
                    })?;
                }
            }
        }
        for e in &self.edges {
            for pid in [&e.from, &e.to] {
                if !self.nodes.iter().any(|n| &n.pid == pid) {
                    return Err(Error::InvalidPattern(format!("dangling pid `{pid}`")));
                }
            }
            if e.max_hops == 0 {
                return Err(Error::InvalidPattern("max_hops must be positive".into()));
            }
        }
        // weak connectivity over the undirected pattern edges
        if self.nodes.len() == 1 && self.edges.is_empty() {
            return Err(Error::InvalidPattern(
                "disconnected/trivial pattern: single node, no edges".into(),
            ));
        }
        let index: HashMap<&str, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.pid.as_str(), i)).collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (a, b) = (index[e.from.as_str()], index[e.to.as_str()]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPattern("pattern graph is not weakly connected".into()));
        }
        Ok(())
    }

    fn element_count(&self) -> usize {
        self.nodes.len() + self.edges.len()
    }
}

pub fn load_pattern(path: &Path) -> Result<AttackPattern> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let pattern: AttackPattern =
        serde_json::from_str(&text).map_err(|e| Error::InvalidPattern(e.to_string()))?;
    pattern.validate()?;
    Ok(pattern)
}

fn constraint_holds(stream: &EventStream, node: NodeId, ty: usize, c: &Constraint) -> bool {
    let info = stream.node(node);
    match c {
        Constraint::AttrEquals { attr, value } => stream
            .vocab()
            .attr_value_index(ty, attr, value)
            .is_some_and(|i| info.features[i] > 0.5),
        Constraint::AttrOneOf { attr, values } => values.iter().any(|v| {
            stream
                .vocab()
                .attr_value_index(ty, attr, v)
                .is_some_and(|i| info.features[i] > 0.5)
        }),
        Constraint::IdRegex(re) => Regex::new(re).map(|r| r.is_match(&info.id)).unwrap_or(false),
    }
}

/// Exactly the nodes matching the pattern node's type and predicate.
pub fn candidate_nodes(stream: &EventStream, pnode: &PatternNode) -> BTreeSet<NodeId> {
    let Some(ty) = stream.vocab().node_type_index(&pnode.node_type) else {
        return BTreeSet::new();
    };
    (0..stream.n_nodes())
        .map(|i| NodeId(i as u32))
        .filter(|&n| stream.node(n).node_type == ty)
        .filter(|&n| pnode.constraints.iter().all(|c| constraint_holds(stream, n, ty, c)))
        .collect()
}

/// An embedding of the pattern into the stream: injective node map plus one
/// realized event path per matched pattern edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub node_map: BTreeMap<String, NodeId>,
    /// Pattern-edge index -> ordinals of the realizing event path.
    pub path_map: BTreeMap<usize, Vec<usize>>,
    /// Matched elements / total elements, in [0, 1].
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignOutcome {
    /// Sorted by score descending, then lexicographically by node map.
    pub alignments: Vec<Alignment>,
    /// Set when the expansion budget ran out before the search finished.
    pub truncated: bool,
}

/// Shortest time-ordered event path from `src` to `dst` whose final hop has
/// edge type `et`, at most `max_hops` events. Breadth-first by hop count
/// with events explored in ordinal order, so the result is deterministic.
fn find_path(
    stream: &EventStream,
    src: NodeId,
    dst: NodeId,
    et: usize,
    max_hops: usize,
) -> Option<Vec<usize>> {
    let mut frontier: Vec<(NodeId, f64, Vec<usize>)> = vec![(src, f64::NEG_INFINITY, vec![])];
    for _ in 0..max_hops {
        let mut next = Vec::new();
        for e in stream.events() {
            for (node, ts, path) in &frontier {
                if e.src == *node && e.timestamp >= *ts {
                    let mut p = path.clone();
                    p.push(e.ordinal);
                    if e.dst == dst && e.edge_type == et {
                        return Some(p);
                    }
                    next.push((e.dst, e.timestamp, p));
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            return None;
        }
    }
    None
}

struct AlignSearch<'a> {
    stream: &'a EventStream,
    pattern: &'a AttackPattern,
    candidates: Vec<Vec<NodeId>>,
    budget: usize,
    expansions: usize,
    truncated: bool,
    best_score: f64,
    best: Vec<Alignment>,
}

impl AlignSearch<'_> {
    /// Extends a partial pid assignment; pids are assigned in declaration
    /// order, each either to a candidate (node-index order) or skipped.
    fn dfs(&mut self, depth: usize, node_map: &mut BTreeMap<String, NodeId>) {
        if self.truncated {
            return;
        }
        if depth == self.pattern.nodes.len() {
            self.score_assignment(node_map);
            return;
        }
        // bound: even if everything still open matched, could we reach best?
        let assigned = node_map.len();
        let open_nodes = self.pattern.nodes.len() - depth;
        let max_score = (assigned + open_nodes + self.pattern.edges.len()) as f64
            / self.pattern.element_count() as f64;
        if max_score + 1e-12 < self.best_score {
            return;
        }
        let pid = self.pattern.nodes[depth].pid.clone();
        for i in 0..self.candidates[depth].len() {
            let cand = self.candidates[depth][i];
            if node_map.values().any(|&n| n == cand) {
                continue; // injective
            }
            if self.expansions >= self.budget {
                self.truncated = true;
                return;
            }
            self.expansions += 1;
            node_map.insert(pid.clone(), cand);
            self.dfs(depth + 1, node_map);
            node_map.remove(&pid);
            if self.truncated {
                return;
            }
        }
        // skip branch: leave this pid unmatched
        self.dfs(depth + 1, node_map);
    }

    fn score_assignment(&mut self, node_map: &BTreeMap<String, NodeId>) {
        if node_map.is_empty() {
            return;
        }
        let mut path_map = BTreeMap::new();
        for (i, pe) in self.pattern.edges.iter().enumerate() {
            let (Some(&from), Some(&to)) = (node_map.get(&pe.from), node_map.get(&pe.to)) else {
                continue;
            };
            let Some(et) = self.stream.vocab().edge_type_index(&pe.edge_type) else {
                continue;
            };
            if let Some(path) = find_path(self.stream, from, to, et, pe.max_hops) {
                path_map.insert(i, path);
            }
        }
        let score =
            (node_map.len() + path_map.len()) as f64 / self.pattern.element_count() as f64;
        if score > self.best_score + 1e-12 {
            self.best_score = score;
            self.best.clear();
        }
        if (score - self.best_score).abs() <= 1e-12 {
            self.best.push(Alignment { node_map: node_map.clone(), path_map, score });
        }
    }
}

/// Finds embeddings of `pattern` in `stream`. All full embeddings are
/// returned when they exist; otherwise the best-scoring partial ones.
pub fn align(stream: &EventStream, pattern: &AttackPattern, budget: usize) -> Result<AlignOutcome> {
    if budget == 0 {
        return Err(Error::other("alignment budget must be positive"));
    }
    pattern.validate()?;
    let candidates: Vec<Vec<NodeId>> = pattern
        .nodes
        .iter()
        .map(|pn| candidate_nodes(stream, pn).into_iter().collect())
        .collect();
    let mut search = AlignSearch {
        stream,
        pattern,
        candidates,
        budget,
        expansions: 0,
        truncated: false,
        best_score: 0.0,
        best: Vec::new(),
    };
    let mut node_map = BTreeMap::new();
    search.dfs(0, &mut node_map);

    let mut alignments = search.best;
    alignments.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.node_map.iter().collect::<Vec<_>>().cmp(&b.node_map.iter().collect()))
    });
    alignments.dedup();
    Ok(AlignOutcome { alignments, truncated: search.truncated })
}

/// Re-checks an alignment directly against the stream: predicates,
/// injectivity, path connectivity, time ordering, hop bounds, and the score
/// arithmetic. Deliberately does not share code with the search.
pub fn verify_alignment(
    stream: &EventStream,
    pattern: &AttackPattern,
    alignment: &Alignment,
) -> std::result::Result<(), String> {
    let mut used = BTreeSet::new();
    for (pid, &node) in &alignment.node_map {
        let pn = pattern
            .nodes
            .iter()
            .find(|n| &n.pid == pid)
            .ok_or_else(|| format!("node_map names unknown pid `{pid}`"))?;
        if !used.insert(node) {
            return Err(format!("node_map is not injective at `{pid}`"));
        }
        let info = stream.node(node);
        let ty = stream
            .vocab()
            .node_type_index(&pn.node_type)
            .ok_or_else(|| format!("unknown node type `{}`", pn.node_type))?;
        if info.node_type != ty {
            return Err(format!("`{pid}` mapped to a node of the wrong type"));
        }
        for c in &pn.constraints {
            let ok = match c {
                Constraint::AttrEquals { attr, value } => stream
                    .vocab()
                    .attr_value_index(ty, attr, value)
                    .map(|i| info.features[i] > 0.5)
                    .unwrap_or(false),
                Constraint::AttrOneOf { attr, values } => values.iter().any(|v| {
                    stream
                        .vocab()
                        .attr_value_index(ty, attr, v)
                        .map(|i| info.features[i] > 0.5)
                        .unwrap_or(false)
                }),
                Constraint::IdRegex(re) => Regex::new(re)
                    .map(|r| r.is_match(&info.id))
                    .map_err(|e| format!("bad regex: {e}"))?,
            };
            if !ok {
                return Err(format!("`{pid}` violates a predicate"));
            }
        }
    }
    for (&i, path) in &alignment.path_map {
        let pe = pattern.edges.get(i).ok_or_else(|| format!("path for unknown edge {i}"))?;
        let from = alignment.node_map.get(&pe.from).ok_or("path with unmapped `from`")?;
        let to = alignment.node_map.get(&pe.to).ok_or("path with unmapped `to`")?;
        if path.is_empty() || path.len() > pe.max_hops {
            return Err(format!("edge {i}: path length {} out of bounds", path.len()));
        }
        let mut at = *from;
        let mut last_ts = f64::NEG_INFINITY;
        for &ord in path {
            let e = stream.event(ord);
            if e.src != at {
                return Err(format!("edge {i}: path is not connected"));
            }
            if e.timestamp < last_ts {
                return Err(format!("edge {i}: path is not time-ordered"));
            }
            at = e.dst;
            last_ts = e.timestamp;
        }
        if at != *to {
            return Err(format!("edge {i}: path does not end at `{}`", pe.to));
        }
        let last = stream.event(*path.last().unwrap());
        if stream.edge_type_name(last) != pe.edge_type {
            return Err(format!("edge {i}: final hop has wrong edge type"));
        }
    }
    let expected = (alignment.node_map.len() + alignment.path_map.len()) as f64
        / pattern.element_count() as f64;
    if (alignment.score - expected).abs() > 1e-9 {
        return Err(format!("score {} disagrees with recount {expected}", alignment.score));
    }
    Ok(())
}
