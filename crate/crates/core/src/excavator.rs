//! Monte Carlo tree search over event subsets. Nodes are subsets of the
//! root candidate set; a child removes one batch (default one event) from
//! its parent. Selection follows UCT over expanded removals, expansion
//! discards the lowest-relevance unexpanded events (sniffer-guided, scores
//! computed once per target), simulation scores the target on the view
//! restricted to the node's events, and backpropagation accumulates reward
//! and visit counts along the path.
//!
//! Subsets reached via different removal orders are shared through a
//! transposition table, and rewards are cached per subset — simulation is
//! deterministic, so re-evaluation would be wasted work.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::detector::{score_event, score_event_on_view, DetectorHead};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::event_graph::{EventStream, GraphView};
use crate::sniffer::{relevance_batch, SnifferNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    /// Exploration coefficient; `None` scales one off the root reward.
    pub lambda: Option<f64>,
    /// Stop rule: nodes at or below this many events are terminal.
    pub k_min: usize,
    pub rollouts: usize,
    /// Events removed per expansion.
    pub expand_batch: usize,
    /// Reserved for parallel rollouts; the reference mode is sequential and
    /// draws no randomness.
    pub rng_seed: u64,
    /// Root truncation: keep only this many most recent candidates.
    pub horizon: Option<usize>,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            lambda: None,
            k_min: 5,
            rollouts: 200,
            expand_batch: 1,
            rng_seed: 0,
            horizon: None,
        }
    }
}

/// One search node: a candidate event subset with per-removal statistics.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub events: BTreeSet<usize>,
    /// Removal batch -> arena index of the child.
    pub children: BTreeMap<Vec<usize>, usize>,
    pub n_counts: BTreeMap<Vec<usize>, u64>,
    pub c_counts: BTreeMap<Vec<usize>, f64>,
    /// Simulated reward, cached (simulation is deterministic).
    pub reward: Option<f64>,
    expanded: BTreeSet<usize>,
}

impl SearchNode {
    fn new(events: BTreeSet<usize>) -> SearchNode {
        SearchNode {
            events,
            children: BTreeMap::new(),
            n_counts: BTreeMap::new(),
            c_counts: BTreeMap::new(),
            reward: None,
            expanded: BTreeSet::new(),
        }
    }

    pub fn total_visits(&self) -> u64 {
        self.n_counts.values().sum()
    }
}

/// Root node: all candidate ordinals before the target (truncated to the
/// `horizon` most recent when set).
pub fn init_root(stream: &EventStream, target: usize, horizon: Option<usize>) -> Result<SearchNode> {
    if target > stream.n_events() {
        return Err(Error::OrdinalOutOfRange { k: target, max: stream.n_events() });
    }
    if target < 2 {
        return Err(Error::NothingToExplain(target));
    }
    let first = match horizon {
        Some(h) if target - 1 > h => target - h,
        _ => 1,
    };
    Ok(SearchNode::new((first..target).collect()))
}

/// Eq.-style UCT value for one removal: c/n + λ·√(Σ n)/(1 + n), with the
/// 0/0 exploitation term defined as 0 for unvisited removals.
pub fn uct_value(c: f64, n: u64, total_n: u64, lambda: f64) -> f64 {
    let exploit = if n == 0 { 0.0 } else { c / n as f64 };
    exploit + lambda * (total_n as f64).sqrt() / (1.0 + n as f64)
}

#[cfg(debug_assertions)]
fn uct_slow_check(node: &SearchNode, lambda: f64, picked: &[usize]) {
    // independent re-evaluation of the selection rule
    let total: u64 = node.n_counts.values().copied().sum();
    let mut best: Option<(&Vec<usize>, f64)> = None;
    for key in node.children.keys() {
        let n = node.n_counts[key];
        let c = node.c_counts[key];
        let mean = if n > 0 { c / n as f64 } else { 0.0 };
        let explore = lambda * f64::sqrt(total as f64) / (1.0 + n as f64);
        let v = mean + explore;
        let replace = match best {
            None => true,
            Some((bk, bv)) => v > bv || (v == bv && key < bk),
        };
        if replace {
            best = Some((key, v));
        }
    }
    debug_assert_eq!(best.expect("children exist").0.as_slice(), picked, "UCT selection mismatch");
}

/// Picks the expanded removal maximizing the UCT criterion; ties break
/// toward the smallest removal key.
pub fn select(node: &SearchNode, lambda: f64) -> Result<Vec<usize>> {
    if node.children.is_empty() {
        return Err(Error::other("select on a node with no expanded children"));
    }
    let total = node.total_visits();
    let mut best_key: Option<&Vec<usize>> = None;
    let mut best_val = f64::NEG_INFINITY;
    for key in node.children.keys() {
        let v = uct_value(node.c_counts[key], node.n_counts[key], total, lambda);
        if v > best_val {
            best_val = v;
            best_key = Some(key);
        }
    }
    let picked = best_key.expect("non-empty children").clone();
    #[cfg(debug_assertions)]
    uct_slow_check(node, lambda, &picked);
    Ok(picked)
}

/// The removal batch a new expansion would discard: the `expand_batch`
/// lowest-relevance unexpanded events (arg-min of the sniffer score, ties
/// toward the smaller ordinal). `None` when the node is terminal or fully
/// expanded.
pub fn expansion_batch(
    node: &SearchNode,
    scores: &HashMap<usize, f64>,
    k_min: usize,
    expand_batch: usize,
) -> Option<Vec<usize>> {
    if node.events.len() <= k_min {
        return None;
    }
    let mut open: Vec<usize> =
        node.events.iter().copied().filter(|e| !node.expanded.contains(e)).collect();
    if open.is_empty() {
        return None;
    }
    open.sort_by(|a, b| {
        let sa = scores.get(a).copied().unwrap_or(0.5);
        let sb = scores.get(b).copied().unwrap_or(0.5);
        sa.partial_cmp(&sb).unwrap().then(a.cmp(b))
    });
    let take = expand_batch.max(1).min(node.events.len() - k_min).min(open.len());
    let mut batch: Vec<usize> = open.into_iter().take(take).collect();
    batch.sort_unstable();
    Some(batch)
}

/// Reward of a candidate subset: the detector's score for the target seen
/// through the restricted view when the full-graph decision was "attack",
/// and one minus that score otherwise.
pub fn simulate(
    events: &BTreeSet<usize>,
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    target: usize,
    full_is_attack: bool,
) -> Result<f64> {
    let view = GraphView::restricted(stream, target, events.iter().copied().collect())?;
    let s = score_event_on_view(&view, params, head)?;
    Ok(if full_is_attack { s } else { 1.0 - s })
}

/// c += r and n += 1 at every (node, removal) pair along the path.
pub fn backprop(arena: &mut [SearchNode], path: &[(usize, Vec<usize>)], reward: f64) {
    for (node_idx, key) in path {
        let node = &mut arena[*node_idx];
        *node.c_counts.get_mut(key).expect("expanded removal") += reward;
        *node.n_counts.get_mut(key).expect("expanded removal") += 1;
    }
}

/// The search outcome: the best-reward subset visited, with a full
/// importance ranking of the root candidates for sparsity sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target: usize,
    pub events: BTreeSet<usize>,
    pub reward: f64,
    /// Every root candidate, most important first: the surviving subset by
    /// sniffer relevance, then removed events by removal depth (deepest
    /// first).
    pub ranking: Vec<usize>,
    pub config: MctsConfig,
}

fn better(
    reward: f64,
    events: &BTreeSet<usize>,
    best_reward: f64,
    best_events: &BTreeSet<usize>,
) -> bool {
    if reward != best_reward {
        return reward > best_reward;
    }
    if events.len() != best_events.len() {
        return events.len() < best_events.len();
    }
    let a: Vec<usize> = events.iter().copied().collect();
    let b: Vec<usize> = best_events.iter().copied().collect();
    a < b
}

struct Tree {
    arena: Vec<SearchNode>,
    interned: HashMap<Vec<usize>, usize>,
}

impl Tree {
    fn intern(&mut self, events: BTreeSet<usize>) -> usize {
        let key: Vec<usize> = events.iter().copied().collect();
        if let Some(&idx) = self.interned.get(&key) {
            return idx;
        }
        self.arena.push(SearchNode::new(events));
        let idx = self.arena.len() - 1;
        self.interned.insert(key, idx);
        idx
    }
}

/// Runs the full search for one target and returns the best explanation.
/// Deterministic: selection ties, expansion ties, and rewards are all
/// resolved without randomness.
pub fn explain(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    sniffer: &SnifferNet,
    target: usize,
    config: &MctsConfig,
) -> Result<Explanation> {
    if config.rollouts < 1 {
        return Err(Error::other("rollouts must be at least 1"));
    }
    let root_node = init_root(stream, target, config.horizon)?;
    let root_events = root_node.events.clone();

    // sniffer scores once per target, shared across all nodes
    let candidates: Vec<usize> = root_events.iter().copied().collect();
    let score_list = relevance_batch(sniffer, stream, &candidates, target)?;
    let scores: HashMap<usize, f64> = candidates.iter().copied().zip(score_list).collect();

    let full_score = score_event(target, stream, params, head)?;
    let full_is_attack = full_score > head.tau;

    let mut tree = Tree { arena: vec![root_node], interned: HashMap::new() };
    tree.interned.insert(candidates.clone(), 0);

    let r_root = simulate(&root_events, stream, params, head, target, full_is_attack)?;
    tree.arena[0].reward = Some(r_root);
    let lambda = config.lambda.unwrap_or_else(|| 5.0 * r_root.max(1e-3).sqrt());

    let mut best_reward = r_root;
    let mut best_events = root_events.clone();
    let mut best_path: Vec<Vec<usize>> = Vec::new();

    for _ in 0..config.rollouts {
        let mut cur = 0usize;
        let mut path: Vec<(usize, Vec<usize>)> = Vec::new();
        loop {
            if tree.arena[cur].events.len() <= config.k_min {
                break; // terminal: stop rule
            }
            if let Some(batch) =
                expansion_batch(&tree.arena[cur], &scores, config.k_min, config.expand_batch)
            {
                let mut child_events = tree.arena[cur].events.clone();
                for e in &batch {
                    child_events.remove(e);
                }
                let child = tree.intern(child_events);
                let node = &mut tree.arena[cur];
                node.children.insert(batch.clone(), child);
                node.n_counts.insert(batch.clone(), 0);
                node.c_counts.insert(batch.clone(), 0.0);
                node.expanded.extend(batch.iter().copied());
                path.push((cur, batch));
                cur = child;
                break; // simulate the newly expanded node
            }
            let key = select(&tree.arena[cur], lambda)?;
            let child = tree.arena[cur].children[&key];
            path.push((cur, key));
            cur = child;
        }

        let r = match tree.arena[cur].reward {
            Some(r) => r,
            None => {
                let r =
                    simulate(&tree.arena[cur].events, stream, params, head, target, full_is_attack)?;
                tree.arena[cur].reward = Some(r);
                r
            }
        };
        backprop(&mut tree.arena, &path, r);

        if better(r, &tree.arena[cur].events, best_reward, &best_events) {
            best_reward = r;
            best_events = tree.arena[cur].events.clone();
            best_path = path.into_iter().map(|(_, key)| key).collect();
        }
    }

    // ranking: survivors by relevance, then removals deepest-first
    let by_relevance = |set: &[usize]| -> Vec<usize> {
        let mut v = set.to_vec();
        v.sort_by(|a, b| {
            let sa = scores.get(a).copied().unwrap_or(0.5);
            let sb = scores.get(b).copied().unwrap_or(0.5);
            sb.partial_cmp(&sa).unwrap().then(a.cmp(b))
        });
        v
    };
    let mut ranking = by_relevance(&best_events.iter().copied().collect::<Vec<_>>());
    for batch in best_path.iter().rev() {
        ranking.extend(by_relevance(batch));
    }
    debug_assert_eq!(ranking.len(), root_events.len());

    Ok(Explanation {
        target,
        events: best_events,
        reward: best_reward,
        ranking,
        config: config.clone(),
    })
}
