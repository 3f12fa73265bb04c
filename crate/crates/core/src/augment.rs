//! The erosion function: manufactures labeled attack samples by realizing
//! unmatched pattern edges as injected events inside the aligned region,
//! then perturbing the region with node/edge perturbation, feature masking,
//! and temporal random walks.
//!
//! Every change is captured as a replayable record; `erode` itself builds
//! its output stream by replaying the records against the original stream,
//! so the provenance note is exact by construction.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_graph::{Event, EventStream, GraphView, Label, NodeId, StreamBuilder};
use crate::pattern::{Alignment, AttackPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub node_perturb_rate: f64,
    pub edge_perturb_rate: f64,
    pub feature_mask_rate: f64,
    pub walk_length: usize,
    pub walk_count: usize,
    pub rng_seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            node_perturb_rate: 0.1,
            edge_perturb_rate: 0.1,
            feature_mask_rate: 0.1,
            walk_length: 8,
            walk_count: 4,
            rng_seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("node_perturb_rate", self.node_perturb_rate),
            ("edge_perturb_rate", self.edge_perturb_rate),
            ("feature_mask_rate", self.feature_mask_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidSpec(format!("{name} {r} not in [0,1]")));
            }
        }
        if self.walk_length < 1 {
            return Err(Error::InvalidSpec("walk_length must be >= 1".into()));
        }
        Ok(())
    }
}

/// One replayable mutation of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Change {
    /// Label an existing event (by original ordinal) as an attack.
    RelabelAttack { ordinal: usize },
    /// Insert a new attack-labeled event.
    InjectEvent {
        src: NodeId,
        dst: NodeId,
        edge_type: String,
        attrs: Vec<f64>,
        ts: f64,
    },
    /// Register a fresh node (used when a pattern pid had no aligned node).
    AddNode { id: String, type_name: String, features: Vec<f64> },
    /// Remove an original event.
    DropEvent { ordinal: usize },
    /// Copy an original event at a slightly later timestamp.
    DuplicateEvent { ordinal: usize, ts: f64 },
    /// Clone a node (copied features) and copy one of its events onto the clone.
    DuplicateNode { node: NodeId, new_id: String, copy_event: Option<usize> },
    /// Zero a node's feature vector.
    MaskFeatures { node: NodeId },
}

impl Change {
    pub fn kind(&self) -> &'static str {
        match self {
            Change::RelabelAttack { .. } => "relabel_attack",
            Change::InjectEvent { .. } => "inject_event",
            Change::AddNode { .. } => "add_node",
            Change::DropEvent { .. } => "drop_event",
            Change::DuplicateEvent { .. } => "duplicate_event",
            Change::DuplicateNode { .. } => "duplicate_node",
            Change::MaskFeatures { .. } => "mask_features",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub kind: String,
    /// Index of the seeded decision that produced this change (0 for
    /// deterministic changes such as injections).
    pub seed_step: usize,
    pub change: Change,
}

fn record(seed_step: usize, change: Change) -> ChangeRecord {
    ChangeRecord { kind: change.kind().to_string(), seed_step, change }
}

#[derive(Debug, Clone)]
pub struct ErosionResult {
    pub stream: EventStream,
    /// Ordinals (in the eroded stream) labeled attack by the erosion.
    pub injected: BTreeSet<usize>,
    /// Original ordinals deleted.
    pub removed: BTreeSet<usize>,
    pub provenance_note: Vec<ChangeRecord>,
    /// Temporal random-walk views over the original stream, kept as extra
    /// positive context for contrastive training.
    pub walk_views: Vec<Vec<usize>>,
}

pub struct ReplayOutput {
    pub stream: EventStream,
    pub injected: BTreeSet<usize>,
    pub removed: BTreeSet<usize>,
}

/// Applies change records to a stream. The eroded stream keeps the original
/// epoch and timestamps (no re-shifting), so untouched events are
/// bit-identical to their originals.
pub fn replay(stream: &EventStream, notes: &[ChangeRecord]) -> Result<ReplayOutput> {
    struct Entry {
        orig: Option<usize>,
        src: NodeId,
        dst: NodeId,
        edge_type: usize,
        attrs: Vec<f64>,
        ts: f64,
        label: Option<Label>,
        by_erosion: bool,
    }

    let mut builder = StreamBuilder::new(stream.vocab().clone())?;
    for n in stream.nodes() {
        builder.add_node(&n.id, &stream.vocab().node_types[n.node_type].name, n.features.clone())?;
    }

    let mut entries: Vec<Entry> = stream
        .events()
        .iter()
        .map(|e| Entry {
            orig: Some(e.ordinal),
            src: e.src,
            dst: e.dst,
            edge_type: e.edge_type,
            attrs: e.edge_attrs.clone(),
            ts: e.timestamp,
            label: e.label,
            by_erosion: false,
        })
        .collect();
    let mut removed = BTreeSet::new();
    let mut masked: Vec<NodeId> = Vec::new();

    let find = |entries: &[Entry], ordinal: usize| -> Result<usize> {
        entries
            .iter()
            .position(|en| en.orig == Some(ordinal))
            .ok_or_else(|| Error::other(format!("change references missing ordinal {ordinal}")))
    };

    for rec in notes {
        match &rec.change {
            Change::RelabelAttack { ordinal } => {
                let i = find(&entries, *ordinal)?;
                entries[i].label = Some(Label::Attack);
                entries[i].by_erosion = true;
            }
            Change::InjectEvent { src, dst, edge_type, attrs, ts } => {
                let et = stream
                    .vocab()
                    .edge_type_index(edge_type)
                    .ok_or_else(|| Error::UnknownType { kind: "edge", label: edge_type.clone() })?;
                entries.push(Entry {
                    orig: None,
                    src: *src,
                    dst: *dst,
                    edge_type: et,
                    attrs: attrs.clone(),
                    ts: *ts,
                    label: Some(Label::Attack),
                    by_erosion: true,
                });
            }
            Change::AddNode { id, type_name, features } => {
                builder.add_node(id, type_name, features.clone())?;
            }
            Change::DropEvent { ordinal } => {
                let i = find(&entries, *ordinal)?;
                if entries[i].by_erosion {
                    return Err(Error::other("erosion dropped one of its own attack events"));
                }
                entries.remove(i);
                removed.insert(*ordinal);
            }
            Change::DuplicateEvent { ordinal, ts } => {
                let i = find(&entries, *ordinal)?;
                entries.push(Entry {
                    orig: None,
                    src: entries[i].src,
                    dst: entries[i].dst,
                    edge_type: entries[i].edge_type,
                    attrs: entries[i].attrs.clone(),
                    ts: *ts,
                    label: entries[i].label,
                    by_erosion: false,
                });
            }
            Change::DuplicateNode { node, new_id, copy_event } => {
                let info = stream.node(*node);
                let clone = builder.add_node(
                    new_id,
                    &stream.vocab().node_types[info.node_type].name,
                    info.features.clone(),
                )?;
                if let Some(ordinal) = copy_event {
                    let i = find(&entries, *ordinal)?;
                    let (mut src, mut dst) = (entries[i].src, entries[i].dst);
                    if src == *node {
                        src = clone;
                    }
                    if dst == *node {
                        dst = clone;
                    }
                    entries.push(Entry {
                        orig: None,
                        src,
                        dst,
                        edge_type: entries[i].edge_type,
                        attrs: entries[i].attrs.clone(),
                        ts: entries[i].ts,
                        label: entries[i].label,
                        by_erosion: false,
                    });
                }
            }
            Change::MaskFeatures { node } => masked.push(*node),
        }
    }

    // stable sort: surviving originals keep order, insertions follow ties
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[a].ts.partial_cmp(&entries[b].ts).unwrap());

    let mut events = Vec::with_capacity(entries.len());
    let mut injected = BTreeSet::new();
    for (pos, &i) in order.iter().enumerate() {
        let en = &entries[i];
        if en.by_erosion {
            injected.insert(pos + 1);
        }
        events.push(Event {
            ordinal: pos + 1,
            src: en.src,
            dst: en.dst,
            edge_type: en.edge_type,
            edge_attrs: en.attrs.clone(),
            timestamp: en.ts,
            label: en.label,
        });
    }

    let mut out = builder.assemble_sorted(events, stream.epoch)?;
    for node in masked {
        out.mask_node_features(node);
    }
    Ok(ReplayOutput { stream: out, injected, removed })
}

/// Node set the erosion is allowed to touch: the aligned nodes.
fn aligned_region(alignment: &Alignment) -> BTreeSet<NodeId> {
    alignment.node_map.values().copied().collect()
}

/// Events with both endpoints inside the region.
fn region_events<'a>(stream: &'a EventStream, region: &BTreeSet<NodeId>) -> Vec<&'a Event> {
    stream
        .events()
        .iter()
        .filter(|e| region.contains(&e.src) && region.contains(&e.dst))
        .collect()
}

/// Half the smallest positive timestamp gap among region events; used to
/// offset duplicated events without colliding or reordering across gaps.
fn epsilon_offset(stream: &EventStream, region: &BTreeSet<NodeId>) -> f64 {
    let mut ts: Vec<f64> = region_events(stream, region).iter().map(|e| e.timestamp).collect();
    if ts.len() < 2 {
        ts = stream.events().iter().map(|e| e.timestamp).collect();
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut smallest = f64::INFINITY;
    for w in ts.windows(2) {
        let gap = w[1] - w[0];
        if gap > 0.0 && gap < smallest {
            smallest = gap;
        }
    }
    if smallest.is_finite() {
        smallest / 2.0
    } else {
        0.5
    }
}

/// Per region node: with probability `rate`, drop its (unlabeled)
/// region-internal events or clone the node with one copied event.
/// Draw order per node (node-index order): selection f64, then drop/dup bool.
pub fn node_perturb(
    stream: &EventStream,
    region: &BTreeSet<NodeId>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<ChangeRecord> {
    node_perturb_excluding(stream, region, rate, rng, &BTreeSet::new(), &mut 0)
}

fn node_perturb_excluding(
    stream: &EventStream,
    region: &BTreeSet<NodeId>,
    rate: f64,
    rng: &mut ChaCha8Rng,
    protected: &BTreeSet<usize>,
    step: &mut usize,
) -> Vec<ChangeRecord> {
    let mut out = Vec::new();
    let internal = region_events(stream, region);
    for &node in region.iter() {
        *step += 1;
        let hit = rng.gen::<f64>() < rate;
        if !hit {
            continue;
        }
        let sel = *step;
        let drop = rng.gen::<bool>();
        *step += 1;
        let touching: Vec<usize> = internal
            .iter()
            .filter(|e| (e.src == node || e.dst == node) && !protected.contains(&e.ordinal))
            .map(|e| e.ordinal)
            .collect();
        if drop {
            for ordinal in touching {
                out.push(record(sel, Change::DropEvent { ordinal }));
            }
        } else {
            out.push(record(
                sel,
                Change::DuplicateNode {
                    node,
                    new_id: format!("{}+clone", stream.node(node).id),
                    copy_event: touching.first().copied(),
                },
            ));
        }
    }
    out
}

/// Per (unlabeled) region-internal event: with probability `rate`, drop it
/// or duplicate it at ts + epsilon. Draw order per event (ordinal order):
/// selection f64, then drop/dup bool.
pub fn edge_perturb(
    stream: &EventStream,
    region: &BTreeSet<NodeId>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<ChangeRecord> {
    edge_perturb_excluding(stream, region, rate, rng, &BTreeSet::new(), &mut 0)
}

fn edge_perturb_excluding(
    stream: &EventStream,
    region: &BTreeSet<NodeId>,
    rate: f64,
    rng: &mut ChaCha8Rng,
    protected: &BTreeSet<usize>,
    step: &mut usize,
) -> Vec<ChangeRecord> {
    let eps = epsilon_offset(stream, region);
    let mut out = Vec::new();
    for e in region_events(stream, region) {
        if protected.contains(&e.ordinal) {
            continue;
        }
        *step += 1;
        if rng.gen::<f64>() >= rate {
            continue;
        }
        let sel = *step;
        let drop = rng.gen::<bool>();
        *step += 1;
        if drop {
            out.push(record(sel, Change::DropEvent { ordinal: e.ordinal }));
        } else {
            out.push(record(
                sel,
                Change::DuplicateEvent { ordinal: e.ordinal, ts: e.timestamp + eps },
            ));
        }
    }
    out
}

/// Zero the features of region nodes selected with probability `rate`.
/// One f64 draw per node in node-index order.
pub fn feature_mask(
    stream: &EventStream,
    region: &BTreeSet<NodeId>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<ChangeRecord> {
    let mut step = 0;
    feature_mask_counted(stream, region, rate, rng, &mut step)
}

fn feature_mask_counted(
    _stream: &EventStream,
    region: &BTreeSet<NodeId>,
    rate: f64,
    rng: &mut ChaCha8Rng,
    step: &mut usize,
) -> Vec<ChangeRecord> {
    let mut out = Vec::new();
    for &node in region.iter() {
        *step += 1;
        if rng.gen::<f64>() < rate {
            out.push(record(*step, Change::MaskFeatures { node }));
        }
    }
    out
}

/// Temporal random walk from `start`: each hop follows an event whose source
/// is the current node and whose timestamp is at or after the previous
/// hop's. Returns the view over the traversed events.
pub fn random_walk_subgraph<'a>(
    stream: &'a EventStream,
    start: NodeId,
    walk_length: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GraphView<'a>> {
    if start.idx() >= stream.n_nodes() {
        return Err(Error::other(format!("walk start node {} unknown", start.0)));
    }
    let ordinals = random_walk_ordinals(stream, start, walk_length, rng);
    GraphView::restricted(stream, stream.n_events() + 1, ordinals)
}

fn random_walk_ordinals(
    stream: &EventStream,
    start: NodeId,
    walk_length: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut at = start;
    let mut t = f64::NEG_INFINITY;
    let mut ordinals = Vec::new();
    for _ in 0..walk_length {
        let choices: Vec<&Event> = stream
            .events()
            .iter()
            .filter(|e| e.src == at && e.timestamp >= t)
            .collect();
        if choices.is_empty() {
            break;
        }
        let e = choices[rng.gen_range(0..choices.len())];
        ordinals.push(e.ordinal);
        at = e.dst;
        t = e.timestamp;
    }
    ordinals
}

/// Builds one labeled attack sample from an alignment: relabels matched
/// paths, injects events for unmatched pattern edges at timestamps
/// interpolated across the aligned region's time span, then applies the
/// seeded perturbations to the aligned region only.
pub fn erode(
    stream: &EventStream,
    alignment: &Alignment,
    pattern: &AttackPattern,
    spec: &AugmentationSpec,
) -> Result<ErosionResult> {
    spec.validate()?;
    pattern.validate()?;
    for (pid, &node) in &alignment.node_map {
        if node.idx() >= stream.n_nodes() {
            return Err(Error::AlignmentMismatch(format!("pid `{pid}` maps to unknown node")));
        }
    }
    for path in alignment.path_map.values() {
        for &ord in path {
            if ord < 1 || ord > stream.n_events() {
                return Err(Error::AlignmentMismatch(format!("path ordinal {ord} out of range")));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut notes: Vec<ChangeRecord> = Vec::new();
    let region = aligned_region(alignment);

    // 1. relabel matched paths as attack behavior
    let mut relabel: BTreeSet<usize> = BTreeSet::new();
    for path in alignment.path_map.values() {
        relabel.extend(path.iter().copied());
    }
    for &ordinal in &relabel {
        notes.push(record(0, Change::RelabelAttack { ordinal }));
    }

    // 2. region time span for injection placement
    let span_ts: Vec<f64> = if relabel.is_empty() {
        stream
            .events()
            .iter()
            .filter(|e| region.contains(&e.src) || region.contains(&e.dst))
            .map(|e| e.timestamp)
            .collect()
    } else {
        relabel.iter().map(|&k| stream.event(k).timestamp).collect()
    };
    let lo = span_ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = span_ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, stream.events().last().map_or(0.0, |e| e.timestamp))
    };

    // 3. materialize unmapped pids, then inject one event per unmatched edge
    let mut node_map = alignment.node_map.clone();
    let mut next_node = stream.n_nodes() as u32;
    for pn in &pattern.nodes {
        if !node_map.contains_key(&pn.pid) {
            let id = format!("inj-{}", pn.pid);
            notes.push(record(
                0,
                Change::AddNode { id, type_name: pn.node_type.clone(), features: vec![] },
            ));
            node_map.insert(pn.pid.clone(), NodeId(next_node));
            next_node += 1;
        }
    }
    let unmatched: Vec<usize> = (0..pattern.edges.len())
        .filter(|i| !alignment.path_map.contains_key(i))
        .collect();
    let m = unmatched.len();
    for (j, &i) in unmatched.iter().enumerate() {
        let pe = &pattern.edges[i];
        let et = stream
            .vocab()
            .edge_type_index(&pe.edge_type)
            .ok_or_else(|| Error::UnknownType { kind: "edge", label: pe.edge_type.clone() })?;
        // typical attributes: componentwise mean over existing events of this type
        let dim = stream.vocab().edge_types[et].attr_dim;
        let mut attrs = vec![0.0; dim];
        let mut n = 0usize;
        for e in stream.events().iter().filter(|e| e.edge_type == et) {
            for (a, v) in attrs.iter_mut().zip(&e.edge_attrs) {
                *a += v;
            }
            n += 1;
        }
        if n > 0 {
            for a in &mut attrs {
                *a /= n as f64;
            }
        }
        let ts = lo + (hi - lo) * (j + 1) as f64 / (m + 1) as f64;
        notes.push(record(
            0,
            Change::InjectEvent {
                src: node_map[&pe.from],
                dst: node_map[&pe.to],
                edge_type: pe.edge_type.clone(),
                attrs,
                ts,
            },
        ));
    }

    // 4. seeded perturbations on the aligned region; attack-labeled events
    // (relabeled, or labeled in the source stream) are never perturbed
    let mut protected = relabel;
    for e in stream.events() {
        if e.is_attack() {
            protected.insert(e.ordinal);
        }
    }
    let mut step = 0usize;
    let node_changes =
        node_perturb_excluding(stream, &region, spec.node_perturb_rate, &mut rng, &protected, &mut step);
    let mut dropped: BTreeSet<usize> = node_changes
        .iter()
        .filter_map(|r| match r.change {
            Change::DropEvent { ordinal } => Some(ordinal),
            _ => None,
        })
        .collect();
    notes.extend(node_changes);

    let mut protected_now = protected.clone();
    protected_now.extend(dropped.iter().copied());
    let edge_changes =
        edge_perturb_excluding(stream, &region, spec.edge_perturb_rate, &mut rng, &protected_now, &mut step);
    dropped.extend(edge_changes.iter().filter_map(|r| match r.change {
        Change::DropEvent { ordinal } => Some(ordinal),
        _ => None,
    }));
    notes.extend(edge_changes);

    notes.extend(feature_mask_counted(stream, &region, spec.feature_mask_rate, &mut rng, &mut step));

    // 5. positive-context random walks over the original stream
    let region_vec: Vec<NodeId> = region.iter().copied().collect();
    let mut walk_views = Vec::new();
    for w in 0..spec.walk_count {
        if region_vec.is_empty() {
            break;
        }
        let start = region_vec[w % region_vec.len()];
        let mut ordinals = random_walk_ordinals(stream, start, spec.walk_length, &mut rng);
        ordinals.sort_unstable();
        ordinals.dedup();
        walk_views.push(ordinals);
    }

    let out = replay(stream, &notes)?;
    Ok(ErosionResult {
        stream: out.stream,
        injected: out.injected,
        removed: out.removed,
        provenance_note: notes,
        walk_views,
    })
}
