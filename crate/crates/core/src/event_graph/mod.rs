//! Event/graph data model: typed nodes, timestamped typed events, immutable
//! event streams, and temporal graph views.
//!
//! A stream is immutable once built. Timestamps are stored as seconds
//! relative to the stream's first event so downstream time encodings stay
//! well-scaled; the original epoch is kept for reporting. Ties in timestamp
//! keep input order (stable sort).

pub mod cert;
pub mod jsonl;
pub mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense node index, assigned in first-seen order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Event label: attack events are the rare positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Attack,
}

impl Label {
    pub fn from_bit(bit: u8) -> Result<Label> {
        match bit {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Attack),
            other => Err(Error::other(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Attack => 1,
        }
    }
}

/// A categorical node attribute and its value vocabulary; node features are
/// the concatenated one-hot encodings of the declared attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrDecl {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeDecl {
    pub name: String,
    #[serde(default)]
    pub attrs: Vec<AttrDecl>,
}

impl NodeTypeDecl {
    pub fn feat_dim(&self) -> usize {
        self.attrs.iter().map(|a| a.values.len()).sum()
    }
}

/// Edge types declare their endpoint node types, which fixes the
/// (src_type, edge_type, dst_type) triples the encoder parameterizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTypeDecl {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub attr_dim: usize,
    #[serde(default)]
    pub attr_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeVocab {
    pub node_types: Vec<NodeTypeDecl>,
    pub edge_types: Vec<EdgeTypeDecl>,
}

impl TypeVocab {
    pub fn node_type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn edge_type_index(&self, name: &str) -> Option<usize> {
        self.edge_types.iter().position(|t| t.name == name)
    }

    pub fn node_feat_dim(&self, ty: usize) -> usize {
        self.node_types[ty].feat_dim()
    }

    pub fn max_node_feat_dim(&self) -> usize {
        self.node_types.iter().map(|t| t.feat_dim()).max().unwrap_or(0)
    }

    pub fn max_edge_attr_dim(&self) -> usize {
        self.edge_types.iter().map(|t| t.attr_dim).max().unwrap_or(0)
    }

    /// Feature index of `attr=value` within a node type's one-hot layout.
    pub fn attr_value_index(&self, ty: usize, attr: &str, value: &str) -> Option<usize> {
        let mut off = 0;
        for a in &self.node_types[ty].attrs {
            if a.name == attr {
                return a.values.iter().position(|v| v == value).map(|i| off + i);
            }
            off += a.values.len();
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.node_types {
            if !seen.insert(&t.name) {
                return Err(Error::other(format!("duplicate node type `{}`", t.name)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.edge_types {
            if !seen.insert(&e.name) {
                return Err(Error::other(format!("duplicate edge type `{}`", e.name)));
            }
            if self.node_type_index(&e.src).is_none() {
                return Err(Error::UnknownType { kind: "node", label: e.src.clone() });
            }
            if self.node_type_index(&e.dst).is_none() {
                return Err(Error::UnknownType { kind: "node", label: e.dst.clone() });
            }
            if !e.attr_names.is_empty() && e.attr_names.len() != e.attr_dim {
                return Err(Error::other(format!(
                    "edge type `{}` declares {} attr names for dim {}",
                    e.name,
                    e.attr_names.len(),
                    e.attr_dim
                )));
            }
        }
        Ok(())
    }

    /// Stable content hash; model artifacts refuse to load across vocab changes.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("vocab serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: String,
    pub node_type: usize,
    pub features: Vec<f64>,
}

/// One timestamped, typed interaction; the atom of the whole system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// 1-based position in the stream.
    pub ordinal: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub edge_type: usize,
    pub edge_attrs: Vec<f64>,
    /// Seconds since the stream's first event.
    pub timestamp: f64,
    pub label: Option<Label>,
}

impl Event {
    pub fn is_attack(&self) -> bool {
        self.label == Some(Label::Attack)
    }
}

/// An ordinal-ordered, immutable sequence of events plus the node table and
/// type vocabulary. Safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    vocab: TypeVocab,
    nodes: Vec<NodeInfo>,
    events: Vec<Event>,
    /// Original absolute time of the first event (informational).
    pub epoch: f64,
}

impl EventStream {
    pub fn vocab(&self) -> &TypeVocab {
        &self.vocab
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    /// Event by 1-based ordinal.
    pub fn event(&self, ordinal: usize) -> &Event {
        &self.events[ordinal - 1]
    }

    pub fn node(&self, id: NodeId) -> &NodeInfo {
        &self.nodes[id.idx()]
    }

    pub fn node_by_name(&self, id: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .map(|i| NodeId(i as u32))
    }

    pub fn node_type_name(&self, id: NodeId) -> &str {
        &self.vocab.node_types[self.node(id).node_type].name
    }

    pub fn edge_type_name(&self, e: &Event) -> &str {
        &self.vocab.edge_types[e.edge_type].name
    }

    /// First `count` events, full node table and vocab retained so node
    /// indices stay stable. Used for timestamp-based train splits.
    pub fn prefix(&self, count: usize) -> EventStream {
        EventStream {
            vocab: self.vocab.clone(),
            nodes: self.nodes.clone(),
            events: self.events[..count.min(self.events.len())].to_vec(),
            epoch: self.epoch,
        }
    }

    pub fn attack_ordinals(&self) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| e.is_attack())
            .map(|e| e.ordinal)
            .collect()
    }

    pub(crate) fn mask_node_features(&mut self, node: NodeId) {
        for f in &mut self.nodes[node.idx()].features {
            *f = 0.0;
        }
    }
}

/// The graph induced by all events strictly before `cutoff` (optionally a
/// subset of them). Iteration yields events in ordinal order.
#[derive(Debug, Clone)]
pub struct GraphView<'a> {
    pub stream: &'a EventStream,
    pub cutoff: usize,
    /// Sorted ordinals < cutoff; `None` means all of 1..cutoff.
    pub included: Option<Vec<usize>>,
}

impl<'a> GraphView<'a> {
    /// All events before the cutoff ordinal; internal constructor that also
    /// accepts `cutoff == n_events + 1` for whole-stream views.
    pub(crate) fn up_to(stream: &'a EventStream, cutoff: usize) -> GraphView<'a> {
        GraphView { stream, cutoff, included: None }
    }

    /// View over the entire stream (used by pre-training).
    pub fn full(stream: &'a EventStream) -> GraphView<'a> {
        GraphView::up_to(stream, stream.n_events() + 1)
    }

    /// View over a chosen subset of the events before `cutoff`.
    pub fn restricted(
        stream: &'a EventStream,
        cutoff: usize,
        mut included: Vec<usize>,
    ) -> Result<GraphView<'a>> {
        included.sort_unstable();
        included.dedup();
        if let Some(&last) = included.last() {
            if last >= cutoff {
                return Err(Error::other(format!(
                    "included ordinal {last} not strictly before cutoff {cutoff}"
                )));
            }
        }
        if included.first().is_some_and(|&f| f == 0) {
            return Err(Error::other("ordinals are 1-based".to_string()));
        }
        Ok(GraphView { stream, cutoff, included: Some(included) })
    }

    pub fn len(&self) -> usize {
        match &self.included {
            Some(v) => v.len(),
            None => self.cutoff - 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Event> + '_ {
        let stream = self.stream;
        let cutoff = self.cutoff;
        let (subset, all): (&[usize], std::ops::Range<usize>) = match &self.included {
            Some(v) => (v.as_slice(), 0..0),
            None => (&[], 1..cutoff),
        };
        subset
            .iter()
            .map(move |&k| stream.event(k))
            .chain(all.map(move |k| stream.event(k)))
    }

    /// The timestamp embeddings are evaluated at: the cutoff event's time,
    /// or the last event's time for whole-stream views.
    pub fn eval_time(&self) -> f64 {
        let n = self.stream.n_events();
        if n == 0 {
            return 0.0;
        }
        if self.cutoff <= n {
            self.stream.event(self.cutoff).timestamp
        } else {
            self.stream.event(n).timestamp
        }
    }
}

/// The graph g at ordinal `k`: every event strictly before `k`.
pub fn graph_view_at(stream: &EventStream, k: usize) -> Result<GraphView<'_>> {
    if k < 1 || k > stream.n_events() {
        return Err(Error::OrdinalOutOfRange { k, max: stream.n_events() });
    }
    Ok(GraphView::up_to(stream, k))
}

/// Incrementally builds a validated [`EventStream`].
#[derive(Debug, Clone)]
pub struct StreamBuilder {
    vocab: TypeVocab,
    nodes: Vec<NodeInfo>,
    node_index: HashMap<String, NodeId>,
    raw: Vec<Event>,
}

impl StreamBuilder {
    pub fn new(vocab: TypeVocab) -> Result<StreamBuilder> {
        vocab.validate()?;
        Ok(StreamBuilder { vocab, nodes: Vec::new(), node_index: HashMap::new(), raw: Vec::new() })
    }

    pub fn vocab(&self) -> &TypeVocab {
        &self.vocab
    }

    pub fn node_id(&self, id: &str) -> Option<NodeId> {
        self.node_index.get(id).copied()
    }

    /// Registers a node; `features` may be empty to mean the zero vector.
    pub fn add_node(&mut self, id: &str, type_name: &str, features: Vec<f64>) -> Result<NodeId> {
        if let Some(&existing) = self.node_index.get(id) {
            return Ok(existing);
        }
        let ty = self
            .vocab
            .node_type_index(type_name)
            .ok_or_else(|| Error::UnknownType { kind: "node", label: type_name.to_string() })?;
        let dim = self.vocab.node_feat_dim(ty);
        let features = if features.is_empty() { vec![0.0; dim] } else { features };
        if features.len() != dim {
            return Err(Error::DimMismatch(format!(
                "node `{id}` of type `{type_name}` has {} features, expected {dim}",
                features.len()
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::other(format!("node `{id}` has a non-finite feature")));
        }
        let nid = NodeId(self.nodes.len() as u32);
        self.nodes.push(NodeInfo { id: id.to_string(), node_type: ty, features });
        self.node_index.insert(id.to_string(), nid);
        Ok(nid)
    }

    /// Convenience: one-hot features from `attr=value` pairs.
    pub fn add_node_with_attrs(
        &mut self,
        id: &str,
        type_name: &str,
        attrs: &[(&str, &str)],
    ) -> Result<NodeId> {
        let ty = self
            .vocab
            .node_type_index(type_name)
            .ok_or_else(|| Error::UnknownType { kind: "node", label: type_name.to_string() })?;
        let mut feats = vec![0.0; self.vocab.node_feat_dim(ty)];
        for (attr, value) in attrs {
            let idx = self.vocab.attr_value_index(ty, attr, value).ok_or_else(|| {
                Error::other(format!("unknown attribute value {attr}={value} for type {type_name}"))
            })?;
            feats[idx] = 1.0;
        }
        self.add_node(id, type_name, feats)
    }

    pub fn add_event(
        &mut self,
        src: NodeId,
        dst: NodeId,
        edge_type_name: &str,
        edge_attrs: Vec<f64>,
        timestamp: f64,
        label: Option<Label>,
    ) -> Result<()> {
        let et = self
            .vocab
            .edge_type_index(edge_type_name)
            .ok_or_else(|| Error::UnknownType { kind: "edge", label: edge_type_name.to_string() })?;
        let decl = &self.vocab.edge_types[et];
        let src_ty = &self.vocab.node_types[self.nodes[src.idx()].node_type].name;
        let dst_ty = &self.vocab.node_types[self.nodes[dst.idx()].node_type].name;
        if *src_ty != decl.src || *dst_ty != decl.dst {
            return Err(Error::DimMismatch(format!(
                "edge `{edge_type_name}` connects {}->{}, got {src_ty}->{dst_ty}",
                decl.src, decl.dst
            )));
        }
        if edge_attrs.len() != decl.attr_dim {
            return Err(Error::DimMismatch(format!(
                "edge `{edge_type_name}` has {} attrs, expected {}",
                edge_attrs.len(),
                decl.attr_dim
            )));
        }
        if edge_attrs.iter().any(|a| !a.is_finite()) || !timestamp.is_finite() {
            return Err(Error::other("non-finite event field".to_string()));
        }
        self.raw.push(Event {
            ordinal: 0,
            src,
            dst,
            edge_type: et,
            edge_attrs,
            timestamp,
            label,
        });
        Ok(())
    }

    /// Stable-sorts by timestamp (ties keep insertion order), shifts times to
    /// be relative to the first event, and assigns ordinals.
    pub fn finish(mut self) -> Result<EventStream> {
        self.raw.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).expect("finite"));
        let epoch = self.raw.first().map_or(0.0, |e| e.timestamp);
        for (i, e) in self.raw.iter_mut().enumerate() {
            e.ordinal = i + 1;
            e.timestamp -= epoch;
        }
        Ok(EventStream { vocab: self.vocab, nodes: self.nodes, events: self.raw, epoch })
    }

    /// Assembles a stream from events that are already sorted and carry
    /// final ordinals, keeping timestamps as-is. Used by erosion replay so
    /// untouched events stay bit-identical.
    pub(crate) fn assemble_sorted(self, events: Vec<Event>, epoch: f64) -> Result<EventStream> {
        for w in events.windows(2) {
            if w[0].timestamp > w[1].timestamp {
                return Err(Error::other("assembled events are not time-ordered"));
            }
        }
        Ok(EventStream { vocab: self.vocab, nodes: self.nodes, events, epoch })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_vocab() -> TypeVocab {
        TypeVocab {
            node_types: vec![
                NodeTypeDecl {
                    name: "user".into(),
                    attrs: vec![AttrDecl {
                        name: "dept".into(),
                        values: vec!["eng".into(), "sales".into()],
                    }],
                },
                NodeTypeDecl { name: "pc".into(), attrs: vec![] },
            ],
            edge_types: vec![EdgeTypeDecl {
                name: "logon".into(),
                src: "user".into(),
                dst: "pc".into(),
                attr_dim: 1,
                attr_names: vec!["own_host".into()],
            }],
        }
    }

    fn tiny_stream() -> EventStream {
        let mut b = StreamBuilder::new(tiny_vocab()).unwrap();
        let u = b.add_node_with_attrs("u1", "user", &[("dept", "eng")]).unwrap();
        let p = b.add_node("p1", "pc", vec![]).unwrap();
        b.add_event(u, p, "logon", vec![1.0], 100.0, None).unwrap();
        b.add_event(u, p, "logon", vec![0.0], 50.0, Some(Label::Attack)).unwrap();
        b.add_event(u, p, "logon", vec![1.0], 50.0, None).unwrap();
        b.finish().unwrap()
    }

    #[test]
    fn stable_sort_and_epoch_shift() {
        let s = tiny_stream();
        assert_eq!(s.n_events(), 3);
        // ts 50 events keep insertion order, epoch shifted to 0
        assert_eq!(s.event(1).timestamp, 0.0);
        assert_eq!(s.event(1).label, Some(Label::Attack));
        assert_eq!(s.event(2).timestamp, 0.0);
        assert_eq!(s.event(3).timestamp, 50.0);
        assert_eq!(s.epoch, 50.0);
    }

    #[test]
    fn view_bounds() {
        let s = tiny_stream();
        assert_eq!(graph_view_at(&s, 1).unwrap().len(), 0);
        assert_eq!(graph_view_at(&s, 3).unwrap().len(), 2);
        assert!(graph_view_at(&s, 4).is_err());
        assert!(graph_view_at(&s, 0).is_err());
    }

    #[test]
    fn view_len_matches_cutoff_minus_one() {
        let s = tiny_stream();
        for k in 1..=s.n_events() {
            assert_eq!(graph_view_at(&s, k).unwrap().len(), k - 1);
        }
    }

    #[test]
    fn restricted_view_rejects_out_of_range() {
        let s = tiny_stream();
        assert!(GraphView::restricted(&s, 2, vec![2]).is_err());
        let v = GraphView::restricted(&s, 3, vec![2, 1, 2]).unwrap();
        assert_eq!(v.len(), 2);
        let ords: Vec<usize> = v.iter().map(|e| e.ordinal).collect();
        assert_eq!(ords, vec![1, 2]);
    }

    #[test]
    fn edge_typing_enforced() {
        let mut b = StreamBuilder::new(tiny_vocab()).unwrap();
        let u = b.add_node("u", "user", vec![1.0, 0.0]).unwrap();
        let p = b.add_node("p", "pc", vec![]).unwrap();
        assert!(b.add_event(p, u, "logon", vec![0.0], 0.0, None).is_err());
        assert!(b.add_event(u, p, "logon", vec![0.0, 1.0], 0.0, None).is_err());
    }

    #[test]
    fn vocab_hash_changes_with_content() {
        let v1 = tiny_vocab();
        let mut v2 = tiny_vocab();
        v2.edge_types[0].attr_dim = 2;
        assert_ne!(v1.hash(), v2.hash());
        assert_eq!(v1.hash(), tiny_vocab().hash());
    }
}
