//! Alignment oracle equivalence: on small streams, the DFS search with an
//! unlimited budget must return exactly the full embeddings found by
//! brute-force enumeration over all injective pid -> node assignments.
//! The enumeration and its path check are written here, independent of the
//! search implementation.

use std::collections::{BTreeMap, BTreeSet};

use eventlens::event_graph::{EventStream, Label, NodeId, StreamBuilder};
use eventlens::event_graph::synth::synthetic_vocab;
use eventlens::pattern::{
    align, candidate_nodes, verify_alignment, AttackPattern, Constraint, PatternEdge, PatternNode,
};

fn chain_pattern() -> AttackPattern {
    AttackPattern {
        nodes: vec![
            PatternNode {
                pid: "actor".into(),
                node_type: "user".into(),
                constraints: vec![Constraint::AttrEquals { attr: "dept".into(), value: "rnd".into() }],
            },
            PatternNode { pid: "host".into(), node_type: "pc".into(), constraints: vec![] },
            PatternNode {
                pid: "loot".into(),
                node_type: "file".into(),
                constraints: vec![Constraint::AttrEquals {
                    attr: "sensitivity".into(),
                    value: "sensitive".into(),
                }],
            },
        ],
        edges: vec![
            PatternEdge { from: "actor".into(), to: "host".into(), edge_type: "logon".into(), max_hops: 1 },
            PatternEdge { from: "host".into(), to: "loot".into(), edge_type: "file_access".into(), max_hops: 2 },
        ],
    }
}

/// Test-side path existence check: depth-first over event sequences with
/// non-decreasing timestamps, final hop typed.
fn path_exists(
    stream: &EventStream,
    from: NodeId,
    to: NodeId,
    edge_type: &str,
    max_hops: usize,
) -> bool {
    fn go(
        stream: &EventStream,
        at: NodeId,
        to: NodeId,
        et: &str,
        left: usize,
        min_ts: f64,
    ) -> bool {
        if left == 0 {
            return false;
        }
        for e in stream.events() {
            if e.src != at || e.timestamp < min_ts {
                continue;
            }
            if e.dst == to && stream.edge_type_name(e) == et {
                return true;
            }
            if go(stream, e.dst, to, et, left - 1, e.timestamp) {
                return true;
            }
        }
        false
    }
    go(stream, from, to, edge_type, max_hops, f64::NEG_INFINITY)
}

/// Brute force: every injective assignment of pids to candidate nodes such
/// that all pattern edges have a realizable path.
fn enumerate_full_embeddings(
    stream: &EventStream,
    pattern: &AttackPattern,
) -> BTreeSet<BTreeMap<String, NodeId>> {
    let candidates: Vec<Vec<NodeId>> = pattern
        .nodes
        .iter()
        .map(|pn| candidate_nodes(stream, pn).into_iter().collect())
        .collect();
    let mut found = BTreeSet::new();
    let mut assignment: Vec<Option<NodeId>> = vec![None; pattern.nodes.len()];

    fn rec(
        stream: &EventStream,
        pattern: &AttackPattern,
        candidates: &[Vec<NodeId>],
        assignment: &mut Vec<Option<NodeId>>,
        depth: usize,
        found: &mut BTreeSet<BTreeMap<String, NodeId>>,
    ) {
        if depth == pattern.nodes.len() {
            for pe in &pattern.edges {
                let fi = pattern.nodes.iter().position(|n| n.pid == pe.from).unwrap();
                let ti = pattern.nodes.iter().position(|n| n.pid == pe.to).unwrap();
                if !path_exists(
                    stream,
                    assignment[fi].unwrap(),
                    assignment[ti].unwrap(),
                    &pe.edge_type,
                    pe.max_hops,
                ) {
                    return;
                }
            }
            let map: BTreeMap<String, NodeId> = pattern
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.pid.clone(), assignment[i].unwrap()))
                .collect();
            found.insert(map);
            return;
        }
        for &cand in &candidates[depth] {
            if assignment[..depth].iter().any(|a| *a == Some(cand)) {
                continue;
            }
            assignment[depth] = Some(cand);
            rec(stream, pattern, candidates, assignment, depth + 1, found);
            assignment[depth] = None;
        }
    }
    rec(stream, pattern, &candidates, &mut assignment, 0, &mut found);
    found
}

/// Small hand-built world: two disjoint planted chains plus noise.
fn two_instance_stream() -> EventStream {
    let mut b = StreamBuilder::new(synthetic_vocab()).unwrap();
    let a1 = b.add_node_with_attrs("a1", "user", &[("dept", "rnd"), ("role", "staff")]).unwrap();
    let a2 = b.add_node_with_attrs("a2", "user", &[("dept", "rnd"), ("role", "staff")]).unwrap();
    let bystander =
        b.add_node_with_attrs("b1", "user", &[("dept", "eng"), ("role", "staff")]).unwrap();
    let p1 = b.add_node_with_attrs("p1", "pc", &[("zone", "office")]).unwrap();
    let p2 = b.add_node_with_attrs("p2", "pc", &[("zone", "lab")]).unwrap();
    let s1 = b.add_node_with_attrs("s1", "file", &[("sensitivity", "sensitive")]).unwrap();
    let s2 = b.add_node_with_attrs("s2", "file", &[("sensitivity", "sensitive")]).unwrap();
    let f1 = b.add_node_with_attrs("f1", "file", &[("sensitivity", "normal")]).unwrap();

    let n = Some(Label::Normal);
    b.add_event(a1, p1, "logon", vec![0.0, 1.0], 10.0, n).unwrap();
    b.add_event(p1, s1, "file_access", vec![1.0, 0.0, 0.0, 0.0], 20.0, n).unwrap();
    b.add_event(a2, p2, "logon", vec![0.0, 1.0], 30.0, n).unwrap();
    b.add_event(p2, s2, "file_access", vec![0.0, 0.0, 1.0, 0.0], 40.0, n).unwrap();
    // noise that must not align: wrong order, wrong type, benign user
    b.add_event(bystander, p1, "logon", vec![1.0, 0.0], 50.0, n).unwrap();
    b.add_event(p1, f1, "file_access", vec![1.0, 0.0, 0.0, 0.0], 60.0, n).unwrap();
    b.finish().unwrap()
}

#[test]
fn align_equals_exhaustive_enumeration() {
    let stream = two_instance_stream();
    let pattern = chain_pattern();
    assert!(stream.n_events() <= 50);

    let oracle = enumerate_full_embeddings(&stream, &pattern);
    let out = align(&stream, &pattern, usize::MAX).unwrap();
    assert!(!out.truncated);

    let full: BTreeSet<BTreeMap<String, NodeId>> = out
        .alignments
        .iter()
        .filter(|a| a.score == 1.0)
        .map(|a| a.node_map.clone())
        .collect();
    assert_eq!(full, oracle);
    for a in &out.alignments {
        verify_alignment(&stream, &pattern, a).unwrap();
    }
}

#[test]
fn two_disjoint_instances_found() {
    let stream = two_instance_stream();
    let out = align(&stream, &chain_pattern(), usize::MAX).unwrap();
    let full: Vec<_> = out.alignments.iter().filter(|a| a.score == 1.0).collect();
    assert_eq!(full.len(), 2);
    let m1: BTreeSet<NodeId> = full[0].node_map.values().copied().collect();
    let m2: BTreeSet<NodeId> = full[1].node_map.values().copied().collect();
    assert!(m1.is_disjoint(&m2));
}

#[test]
fn cross_host_chain_via_two_hops() {
    // actor logs onto p1; p1's session reaches s1 only through a two-event
    // chain, exercising max_hops = 2 on the file edge
    let mut b = StreamBuilder::new(synthetic_vocab()).unwrap();
    let a = b.add_node_with_attrs("a", "user", &[("dept", "rnd"), ("role", "staff")]).unwrap();
    let p1 = b.add_node_with_attrs("p1", "pc", &[("zone", "office")]).unwrap();
    let s = b.add_node_with_attrs("s", "file", &[("sensitivity", "sensitive")]).unwrap();
    let f = b.add_node_with_attrs("f", "file", &[("sensitivity", "normal")]).unwrap();
    let n = Some(Label::Normal);
    b.add_event(a, p1, "logon", vec![0.0, 1.0], 1.0, n).unwrap();
    b.add_event(p1, f, "file_access", vec![1.0, 0.0, 0.0, 0.0], 2.0, n).unwrap();
    // no direct p1 -> s event; enumeration must agree there is no 1-hop path
    let stream = b.finish().unwrap();

    let mut pattern = chain_pattern();
    pattern.edges[1].max_hops = 1;
    let oracle = enumerate_full_embeddings(&stream, &pattern);
    assert!(oracle.is_empty());
    let out = align(&stream, &pattern, usize::MAX).unwrap();
    assert!(out.alignments.iter().all(|a| a.score < 1.0));
}

#[test]
fn adding_events_preserves_full_alignments() {
    let stream = two_instance_stream();
    let pattern = chain_pattern();
    let before: BTreeSet<BTreeMap<String, NodeId>> = align(&stream, &pattern, usize::MAX)
        .unwrap()
        .alignments
        .into_iter()
        .filter(|a| a.score == 1.0)
        .map(|a| a.node_map)
        .collect();

    // extend with unrelated later activity
    let mut b = StreamBuilder::new(synthetic_vocab()).unwrap();
    for node in stream.nodes() {
        b.add_node(&node.id, &stream.vocab().node_types[node.node_type].name, node.features.clone())
            .unwrap();
    }
    for e in stream.events() {
        b.add_event(
            e.src,
            e.dst,
            stream.edge_type_name(e),
            e.edge_attrs.clone(),
            e.timestamp,
            e.label,
        )
        .unwrap();
    }
    let extra_user = b.add_node_with_attrs("zz", "user", &[("dept", "rnd"), ("role", "staff")]).unwrap();
    let p1 = b.node_id("p1").unwrap();
    b.add_event(extra_user, p1, "logon", vec![0.0, 0.0], 100.0, Some(Label::Normal)).unwrap();
    let bigger = b.finish().unwrap();

    let after: BTreeSet<BTreeMap<String, NodeId>> = align(&bigger, &pattern, usize::MAX)
        .unwrap()
        .alignments
        .into_iter()
        .filter(|a| a.score == 1.0)
        .map(|a| a.node_map)
        .collect();
    assert!(before.is_subset(&after), "a full alignment disappeared after adding events");
}
