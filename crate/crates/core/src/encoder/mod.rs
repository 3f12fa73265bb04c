//! Temporal heterogeneous graph encoder with per-node memory.
//!
//! Events are processed in ordinal order, grouped into equal-timestamp
//! batches. Each event sends a message to both endpoints built from
//! [sender memory ‖ receiver memory ‖ edge attrs ‖ time encodings]; a
//! receiver aggregates its batch messages with softmax attention over
//! scaled dot products (projections specific to the edge type, which pins
//! down the (src_type, edge_type, dst_type) triple), then gate-updates its
//! memory. Node embeddings are type-specific projections of
//! [memory ‖ static features ‖ time encoding at the evaluation instant].
//!
//! The forward pass is written once over [`Alg`], so inference (`Plain`)
//! and training (`Tape`) share the same code path.

pub mod pretrain;

use std::collections::{HashMap, HashSet};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event_graph::{Event, EventStream, GraphView, NodeId, TypeVocab};
use crate::nn::{optim, Alg, Plain, Seg};

pub use pretrain::{contrastive_gradient, contrastive_objective, pretrain, PretrainOutput, TrainHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderDims {
    pub d_time: usize,
    pub d_mem: usize,
    pub d_emb: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims { d_time: 16, d_mem: 64, d_emb: 64 }
    }
}

/// Segment layout of the flat encoder parameter vector. Order: time_linear,
/// then per edge type (msg, q, k, v), then per node type (gate, update,
/// embed), then the discriminator bilinear form.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayout {
    pub time_linear: Seg,
    pub msg: Vec<Seg>,
    pub query: Vec<Seg>,
    pub key: Vec<Seg>,
    pub value: Vec<Seg>,
    pub gate: Vec<Seg>,
    pub update: Vec<Seg>,
    pub embed: Vec<Seg>,
    pub disc: Seg,
    pub total: usize,
}

impl EncoderLayout {
    pub fn new(vocab: &TypeVocab, dims: EncoderDims, base: usize) -> EncoderLayout {
        let mut off = base;
        let mut seg = |rows: usize, cols: usize| {
            let s = Seg { offset: off, rows, cols };
            off += rows * cols;
            s
        };
        let time_linear = seg(dims.d_time, dims.d_time);
        let (mut msg, mut query, mut key, mut value) = (vec![], vec![], vec![], vec![]);
        for et in &vocab.edge_types {
            let msg_in = 2 * dims.d_mem + et.attr_dim + 2 * dims.d_time;
            msg.push(seg(dims.d_mem, msg_in));
            query.push(seg(dims.d_mem, dims.d_mem));
            key.push(seg(dims.d_mem, dims.d_mem));
            value.push(seg(dims.d_mem, dims.d_mem));
        }
        let (mut gate, mut update, mut embed) = (vec![], vec![], vec![]);
        for nt in &vocab.node_types {
            gate.push(seg(dims.d_mem, 2 * dims.d_mem));
            update.push(seg(dims.d_mem, dims.d_mem));
            embed.push(seg(dims.d_emb, dims.d_mem + nt.feat_dim() + dims.d_time));
        }
        let disc = seg(dims.d_emb, dims.d_emb);
        EncoderLayout {
            time_linear,
            msg,
            query,
            key,
            value,
            gate,
            update,
            embed,
            disc,
            total: off - base,
        }
    }

    pub fn segments(&self) -> Vec<Seg> {
        let mut all = vec![self.time_linear];
        all.extend(&self.msg);
        all.extend(&self.query);
        all.extend(&self.key);
        all.extend(&self.value);
        all.extend(&self.gate);
        all.extend(&self.update);
        all.extend(&self.embed);
        all.push(self.disc);
        all
    }
}

/// All learnable tensors of the encoder (and the pretraining
/// discriminator), stored flat for the optimizer and the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub vocab_hash: String,
    pub data: Vec<f64>,
    pub(crate) layout: EncoderLayout,
}

impl EncoderParams {
    /// Seeded uniform ±1/√fan_in init for every matrix.
    pub fn init(vocab: &TypeVocab, dims: EncoderDims, seed: u64) -> EncoderParams {
        let layout = EncoderLayout::new(vocab, dims, 0);
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for seg in layout.segments() {
            optim::init_matrix(&mut rng, &mut data, seg);
        }
        EncoderParams { dims, vocab_hash: vocab.hash(), data, layout }
    }

    /// Identity time projection, zero everything else; used by tests.
    pub fn zeroed_with_identity_time(vocab: &TypeVocab, dims: EncoderDims) -> EncoderParams {
        let mut p = EncoderParams::init(vocab, dims, 0);
        for v in &mut p.data {
            *v = 0.0;
        }
        for i in 0..dims.d_time {
            p.data[p.layout.time_linear.offset + i * dims.d_time + i] = 1.0;
        }
        p
    }

    pub fn check_stream(&self, stream: &EventStream) -> Result<()> {
        if stream.vocab().hash() != self.vocab_hash {
            return Err(Error::DimMismatch(
                "stream vocabulary does not match the one the parameters were built for".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> &EncoderLayout {
        &self.layout
    }

    pub fn time_linear(&self) -> &[f64] {
        let s = self.layout.time_linear;
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn disc_matrix(&self) -> &[f64] {
        let s = self.layout.disc;
        &self.data[s.offset..s.offset + s.len()]
    }
}

/// Per-node recurrent state plus the touch bookkeeping the readout needs.
#[derive(Debug, Clone)]
pub struct MemoryState<V> {
    pub(crate) mem: HashMap<NodeId, V>,
    pub(crate) last: HashMap<NodeId, f64>,
    touched: Vec<NodeId>,
    touched_set: HashSet<NodeId>,
}

/// Inference-side memory table: plain vectors.
pub type MemoryTable = MemoryState<Vec<f64>>;

impl<V: Clone> MemoryState<V> {
    pub fn new() -> Self {
        MemoryState {
            mem: HashMap::new(),
            last: HashMap::new(),
            touched: Vec::new(),
            touched_set: HashSet::new(),
        }
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last.get(&node).copied().unwrap_or(0.0)
    }

    /// Nodes whose memory was updated, in first-touch order.
    pub fn touched(&self) -> &[NodeId] {
        &self.touched
    }

    fn mem_var<A: Alg<V = V>>(&mut self, alg: &mut A, d_mem: usize, node: NodeId) -> V {
        self.mem.entry(node).or_insert_with(|| alg.zeros(d_mem)).clone()
    }

    fn touch(&mut self, node: NodeId) {
        if self.touched_set.insert(node) {
            self.touched.push(node);
        }
    }
}

impl<V: Clone> Default for MemoryState<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryTable {
    /// Memory vector of a node (zeros when never touched).
    pub fn state_of(&self, node: NodeId, d_mem: usize) -> Vec<f64> {
        self.mem.get(&node).cloned().unwrap_or_else(|| vec![0.0; d_mem])
    }
}

/// The pre-projection sinusoid: sin(Δt / 10000^(2i/d)) at even index 2i,
/// cos(Δt / 10000^((2i+1)/d)) at odd index 2i+1.
pub fn rt_vector(delta_t: f64, d_time: usize) -> Result<Vec<f64>> {
    if delta_t < 0.0 {
        return Err(Error::NegativeDelta(delta_t));
    }
    if d_time == 0 || d_time % 2 != 0 {
        return Err(Error::DimMismatch(format!("d_time {d_time} must be even and positive")));
    }
    Ok(rt_vector_unchecked(delta_t, d_time))
}

fn rt_vector_unchecked(delta_t: f64, d_time: usize) -> Vec<f64> {
    let d = d_time as f64;
    (0..d_time)
        .map(|i| {
            let scale = 10_000f64.powf(i as f64 / d);
            if i % 2 == 0 {
                (delta_t / scale).sin()
            } else {
                (delta_t / scale).cos()
            }
        })
        .collect()
}

/// RTE(Δt) = TimeLinear(RT(Δt)).
pub fn rte(delta_t: f64, params: &EncoderParams) -> Result<Vec<f64>> {
    let rt = rt_vector(delta_t, params.dims.d_time)?;
    let mut alg = Plain::new(&params.data);
    let v = alg.constant(rt);
    Ok(alg.matvec(params.layout.time_linear, &v))
}

fn rte_var<A: Alg>(alg: &mut A, layout: &EncoderLayout, d_time: usize, delta_t: f64) -> A::V {
    debug_assert!(delta_t >= -1e-9, "negative time delta {delta_t}");
    let rt = rt_vector_unchecked(delta_t.max(0.0), d_time);
    let c = alg.constant(rt);
    alg.matvec(layout.time_linear, &c)
}

/// Extract component `i` of a vector value as a length-1 scalar.
fn component<A: Alg>(alg: &mut A, v: &A::V, i: usize, len: usize) -> A::V {
    let mut basis = vec![0.0; len];
    basis[i] = 1.0;
    let b = alg.constant(basis);
    alg.dot(v, &b)
}

/// Applies one equal-timestamp batch of events to the memory state. Each
/// event messages both endpoints; receivers aggregate with attention.
pub(crate) fn apply_batch<A: Alg>(
    alg: &mut A,
    params: &EncoderParams,
    stream: &EventStream,
    events: &[&Event],
    state: &mut MemoryState<A::V>,
) {
    if events.is_empty() {
        return;
    }
    let d = params.dims;
    let ts = events[0].timestamp;
    debug_assert!(events.iter().all(|e| e.timestamp == ts), "batch must share a timestamp");

    let mut order: Vec<NodeId> = Vec::new();
    let mut inbox: HashMap<NodeId, Vec<(usize, A::V)>> = HashMap::new();
    for e in events {
        for (sender, receiver) in [(e.src, e.dst), (e.dst, e.src)] {
            let m_sender = state.mem_var(alg, d.d_mem, sender);
            let m_receiver = state.mem_var(alg, d.d_mem, receiver);
            let attrs = alg.constant(e.edge_attrs.clone());
            let rte_s = rte_var(alg, &params.layout, d.d_time, ts - state.last_update(sender));
            let rte_r = rte_var(alg, &params.layout, d.d_time, ts - state.last_update(receiver));
            let input = alg.concat(&[&m_sender, &m_receiver, &attrs, &rte_s, &rte_r]);
            let msg = alg.matvec(params.layout.msg[e.edge_type], &input);
            if !inbox.contains_key(&receiver) {
                order.push(receiver);
            }
            inbox.entry(receiver).or_default().push((e.edge_type, msg));
        }
    }

    let scale = 1.0 / (d.d_mem as f64).sqrt();
    for receiver in order {
        let messages = inbox.remove(&receiver).expect("receiver has messages");
        let mem = state.mem_var(alg, d.d_mem, receiver);

        // α = softmax over scaled dot products q(mem)·k(msg)
        let mut scores = Vec::with_capacity(messages.len());
        for (et, msg) in &messages {
            let q = alg.matvec(params.layout.query[*et], &mem);
            let k = alg.matvec(params.layout.key[*et], msg);
            let s = alg.dot(&q, &k);
            scores.push(alg.affine(&s, scale, 0.0));
        }
        let refs: Vec<&A::V> = scores.iter().collect();
        let score_vec = alg.concat(&refs);
        let weights = alg.softmax(&score_vec);

        let mut agg: Option<A::V> = None;
        for (i, (et, msg)) in messages.iter().enumerate() {
            let v = alg.matvec(params.layout.value[*et], msg);
            let w_i = component(alg, &weights, i, messages.len());
            let term = alg.scale_by(&v, &w_i);
            agg = Some(match agg {
                Some(a) => alg.add(&a, &term),
                None => term,
            });
        }
        let agg = agg.expect("non-empty inbox");

        // mem' = (1 - z) ⊙ mem + z ⊙ tanh(W agg), z = σ(U [mem ‖ agg])
        let node_type = stream.node(receiver).node_type;
        let gate_in = alg.concat(&[&mem, &agg]);
        let z = alg.matvec(params.layout.gate[node_type], &gate_in);
        let z = alg.sigmoid(&z);
        let cand = alg.matvec(params.layout.update[node_type], &agg);
        let cand = alg.tanh(&cand);
        let keep = alg.affine(&z, -1.0, 1.0);
        let kept = alg.mul(&keep, &mem);
        let new = alg.mul(&z, &cand);
        let updated = alg.add(&kept, &new);

        state.mem.insert(receiver, updated);
        state.last.insert(receiver, ts);
        state.touch(receiver);
    }
}

/// Feeds a view's events, grouped into equal-timestamp batches, into an
/// existing state.
pub(crate) fn advance_state<A: Alg>(
    alg: &mut A,
    params: &EncoderParams,
    view: &GraphView<'_>,
    state: &mut MemoryState<A::V>,
) {
    let events: Vec<&Event> = view.iter().collect();
    let mut i = 0;
    while i < events.len() {
        let mut j = i + 1;
        while j < events.len() && events[j].timestamp == events[i].timestamp {
            j += 1;
        }
        apply_batch(alg, params, view.stream, &events[i..j], state);
        i = j;
    }
}

/// h = W_emb^type [memory ‖ static features ‖ rte(now − last_update)].
pub(crate) fn embed_node<A: Alg>(
    alg: &mut A,
    params: &EncoderParams,
    stream: &EventStream,
    state: &mut MemoryState<A::V>,
    node: NodeId,
    now: f64,
) -> A::V {
    let d = params.dims;
    let info = stream.node(node);
    let mem = state.mem_var(alg, d.d_mem, node);
    let feats = alg.constant(info.features.clone());
    let dt = rte_var(alg, &params.layout, d.d_time, now - state.last_update(node));
    let input = alg.concat(&[&mem, &feats, &dt]);
    alg.matvec(params.layout.embed[info.node_type], &input)
}

/// Per-node embeddings at a stated timestamp plus the readout vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub nodes: Vec<NodeId>,
    pub vectors: Vec<Vec<f64>>,
    /// σ(mean of vectors).
    pub global: Vec<f64>,
    pub at: f64,
}

/// Encodes a view with the given (usually fresh) memory table, emitting
/// embeddings for every touched node — or every node when the view is
/// empty — at the view's evaluation time.
pub fn encode(
    view: &GraphView<'_>,
    params: &EncoderParams,
    memory: &mut MemoryTable,
) -> Result<Embedding> {
    params.check_stream(view.stream)?;
    let mut alg = Plain::new(&params.data);
    advance_state(&mut alg, params, view, memory);
    let now = view.eval_time();
    let nodes: Vec<NodeId> = if memory.touched.is_empty() {
        (0..view.stream.n_nodes()).map(|i| NodeId(i as u32)).collect()
    } else {
        memory.touched.clone()
    };
    if nodes.is_empty() {
        return Err(Error::EmptyInput("encode over an empty graph with no nodes"));
    }
    let vectors: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&n| embed_node(&mut alg, params, view.stream, memory, n, now))
        .collect();
    let global = readout(&vectors)?;
    Ok(Embedding { nodes, vectors, global, at: now })
}

/// σ of the mean of the node embeddings.
pub fn readout(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("readout over zero nodes"));
    }
    let d = vectors[0].len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= vectors.len() as f64;
        *m = 1.0 / (1.0 + (-*m).exp());
    }
    Ok(mean)
}

/// D(h, s) = σ(hᵀ W s).
pub fn discriminator(h: &[f64], s: &[f64], w_d: &[f64]) -> f64 {
    assert_eq!(w_d.len(), h.len() * s.len(), "discriminator shape mismatch");
    let mut logit = 0.0;
    for (r, hr) in h.iter().enumerate() {
        let mut acc = 0.0;
        for (c, sc) in s.iter().enumerate() {
            acc += w_d[r * s.len() + c] * sc;
        }
        logit += hr * acc;
    }
    1.0 / (1.0 + (-logit).exp())
}

/// The contrastive objective in its printed form
///   (1/(N+M)) [ Σ log D(h_i, s) + Σ (1 − log D(h̃_j, s)) ].
/// Training minimizes the standard binary cross-entropy instead (see
/// [`pretrain`]); this form is kept for evaluation.
pub fn contrastive_loss(pos: &[Vec<f64>], neg: &[Vec<f64>], s: &[f64], w_d: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyInput("contrastive loss needs both positive and negative nodes"));
    }
    let n = pos.len() as f64;
    let m = neg.len() as f64;
    let mut acc = 0.0;
    for h in pos {
        acc += discriminator(h, s, w_d).ln();
    }
    for h in neg {
        acc += 1.0 - discriminator(h, s, w_d).ln();
    }
    Ok(acc / (n + m))
}
