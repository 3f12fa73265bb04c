//! Relevance scorer over (candidate event, target event) pairs.
//!
//! Events are vectorized as [src features ‖ dst features ‖ RTE(t) ‖ edge
//! attrs] (per-type blocks zero-padded to the vocabulary-wide maxima), with
//! the time projection inherited — frozen — from the fine-tuned encoder. An
//! MLP over [vec(target) ‖ vec(candidate)] is trained by regression against
//! leave-one-out detector-score drops, normalized per target.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{score_event, score_event_on_view, DetectorHead};
use crate::encoder::{rt_vector, EncoderParams};
use crate::error::{Error, Result};
use crate::event_graph::{Event, EventStream, GraphView};
use crate::nn::optim::AdamW;
use crate::nn::tape::Tape;
use crate::nn::{optim, Alg, Plain, Seg};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnifferHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    pub d_hidden: usize,
    /// Teacher labels are computed over at most this many most recent
    /// candidates per target, bounding leave-one-out detector re-runs.
    pub horizon: usize,
}

impl Default for SnifferHyper {
    fn default() -> Self {
        SnifferHyper { lr: 0.01, weight_decay: 0.0001, epochs: 60, rng_seed: 0, d_hidden: 32, horizon: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnifferLayout {
    pub w1: Seg,
    pub b1: Seg,
    pub w2: Seg,
    pub b2: Seg,
    pub w3: Seg,
    pub b3: Seg,
    pub total: usize,
}

impl SnifferLayout {
    pub fn new(vec_dim: usize, d_hidden: usize) -> SnifferLayout {
        let mut off = 0;
        let mut seg = |rows: usize, cols: usize| {
            let s = Seg { offset: off, rows, cols };
            off += rows * cols;
            s
        };
        let w1 = seg(d_hidden, 2 * vec_dim);
        let b1 = seg(d_hidden, 1);
        let w2 = seg(d_hidden, d_hidden);
        let b2 = seg(d_hidden, 1);
        let w3 = seg(1, d_hidden);
        let b3 = seg(1, 1);
        SnifferLayout { w1, b1, w2, b2, w3, b3, total: off }
    }
}

/// MLP relevance net plus the frozen event-vectorizer pieces it inherited
/// from the detector's encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SnifferNet {
    pub vocab_hash: String,
    /// Hash of the detector artifact this sniffer was trained against.
    pub detector_hash: String,
    pub d_hidden: usize,
    pub vec_dim: usize,
    pub d_time: usize,
    /// Frozen copy of the encoder's time projection (row-major d_time²).
    pub time_linear: Vec<f64>,
    pub max_node_feat: usize,
    pub max_edge_attr: usize,
    pub data: Vec<f64>,
    pub trained: bool,
}

impl SnifferNet {
    pub fn init(stream: &EventStream, params: &EncoderParams, hyper: &SnifferHyper) -> SnifferNet {
        let vocab = stream.vocab();
        let max_node_feat = vocab.max_node_feat_dim();
        let max_edge_attr = vocab.max_edge_attr_dim();
        let d_time = params.dims.d_time;
        let vec_dim = 2 * max_node_feat + d_time + max_edge_attr;
        let layout = SnifferLayout::new(vec_dim, hyper.d_hidden);
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.rng_seed);
        for seg in [layout.w1, layout.w2, layout.w3] {
            optim::init_matrix(&mut rng, &mut data, seg);
        }
        SnifferNet {
            vocab_hash: vocab.hash(),
            detector_hash: String::new(),
            d_hidden: hyper.d_hidden,
            vec_dim,
            d_time,
            time_linear: params.time_linear().to_vec(),
            max_node_feat,
            max_edge_attr,
            data,
            trained: false,
        }
    }

    /// All-zero MLP (relevance 0.5 everywhere); used by tests.
    pub fn zeroed(stream: &EventStream, params: &EncoderParams) -> SnifferNet {
        let mut s = SnifferNet::init(stream, params, &SnifferHyper::default());
        for v in &mut s.data {
            *v = 0.0;
        }
        s.trained = true;
        s
    }

    pub fn layout(&self) -> SnifferLayout {
        SnifferLayout::new(self.vec_dim, self.d_hidden)
    }

    fn rte(&self, t: f64) -> Vec<f64> {
        let rt = rt_vector(t.max(0.0), self.d_time).expect("valid dims");
        let mut out = vec![0.0; self.d_time];
        for r in 0..self.d_time {
            for c in 0..self.d_time {
                out[r] += self.time_linear[r * self.d_time + c] * rt[c];
            }
        }
        out
    }

    /// [src features ‖ dst features ‖ RTE(t) ‖ edge attrs], blocks padded
    /// to the vocabulary-wide maxima.
    pub fn vec_event(&self, stream: &EventStream, e: &Event) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.vec_dim);
        let pad = |v: &mut Vec<f64>, src: &[f64], to: usize| {
            v.extend_from_slice(src);
            v.extend(std::iter::repeat(0.0).take(to - src.len()));
        };
        pad(&mut v, &stream.node(e.src).features, self.max_node_feat);
        pad(&mut v, &stream.node(e.dst).features, self.max_node_feat);
        v.extend(self.rte(e.timestamp));
        pad(&mut v, &e.edge_attrs, self.max_edge_attr);
        debug_assert_eq!(v.len(), self.vec_dim);
        v
    }
}

fn mlp_score<A: Alg>(alg: &mut A, layout: &SnifferLayout, input: &A::V) -> A::V {
    let t = alg.matvec(layout.w1, input);
    let b = alg.param_vec(layout.b1);
    let t = alg.add(&t, &b);
    let t = alg.tanh(&t);
    let u = alg.matvec(layout.w2, &t);
    let b = alg.param_vec(layout.b2);
    let u = alg.add(&u, &b);
    let u = alg.tanh(&u);
    let logit = alg.matvec(layout.w3, &u);
    let b = alg.param_vec(layout.b3);
    let logit = alg.add(&logit, &b);
    alg.sigmoid(&logit)
}

/// Relevance of candidate `j` to target `k` (both ordinals, j < k).
pub fn relevance(sniffer: &SnifferNet, stream: &EventStream, j: usize, k: usize) -> Result<f64> {
    if j >= k {
        return Err(Error::OrderViolation { j, k });
    }
    if stream.vocab().hash() != sniffer.vocab_hash {
        return Err(Error::ArtifactMismatch("sniffer vocab differs from stream".into()));
    }
    let target = sniffer.vec_event(stream, stream.event(k));
    let cand = sniffer.vec_event(stream, stream.event(j));
    let mut alg = Plain::new(&sniffer.data);
    let layout = sniffer.layout();
    let t = alg.constant(target);
    let c = alg.constant(cand);
    let input = alg.concat(&[&t, &c]);
    let p = mlp_score(&mut alg, &layout, &input);
    Ok(alg.value(&p)[0])
}

/// Scores every candidate against one target; identical to one-by-one
/// [`relevance`] calls.
pub fn relevance_batch(
    sniffer: &SnifferNet,
    stream: &EventStream,
    candidates: &[usize],
    k: usize,
) -> Result<Vec<f64>> {
    candidates.iter().map(|&j| relevance(sniffer, stream, j, k)).collect()
}

/// Leave-one-out teacher: |score(k on g^k) − score(k on g^k \ {j})| for the
/// `horizon` most recent candidates j, min-max normalized per target (all
/// 0.5 when every delta is equal).
pub fn teacher_labels(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    k: usize,
    horizon: usize,
) -> Result<Vec<(usize, f64)>> {
    if k < 2 {
        return Err(Error::NothingToExplain(k));
    }
    let base = score_event(k, stream, params, head)?;
    let first = if k - 1 > horizon { k - horizon } else { 1 };
    let mut deltas = Vec::with_capacity(k - first);
    for j in first..k {
        let included: Vec<usize> = (1..k).filter(|&o| o != j).collect();
        let view = GraphView::restricted(stream, k, included)?;
        let s = score_event_on_view(&view, params, head)?;
        deltas.push((j, (base - s).abs()));
    }
    let lo = deltas.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().map(|(_, d)| *d).fold(f64::NEG_INFINITY, f64::max);
    let labels = deltas
        .into_iter()
        .map(|(j, d)| (j, if hi > lo { (d - lo) / (hi - lo) } else { 0.5 }))
        .collect();
    Ok(labels)
}

fn mse_loss<A: Alg>(
    alg: &mut A,
    layout: &SnifferLayout,
    pairs: &[(Vec<f64>, Vec<f64>, f64)],
) -> A::V {
    let mut terms = Vec::with_capacity(pairs.len());
    for (target_vec, cand_vec, label) in pairs {
        let t = alg.constant(target_vec.clone());
        let c = alg.constant(cand_vec.clone());
        let input = alg.concat(&[&t, &c]);
        let p = mlp_score(alg, layout, &input);
        let diff = alg.affine(&p, 1.0, -label);
        terms.push(alg.mul(&diff, &diff));
    }
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = alg.add(&acc, t);
    }
    alg.affine(&acc, 1.0 / terms.len() as f64, 0.0)
}

fn build_pairs(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    sniffer: &SnifferNet,
    targets: &[usize],
    horizon: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
    let mut pairs = Vec::new();
    for &k in targets {
        let target_vec = sniffer.vec_event(stream, stream.event(k));
        for (j, label) in teacher_labels(stream, params, head, k, horizon)? {
            let cand_vec = sniffer.vec_event(stream, stream.event(j));
            pairs.push((target_vec.clone(), cand_vec, label));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no sniffer training pairs"));
    }
    Ok(pairs)
}

/// Mean squared error of a sniffer against its teacher labels.
pub fn mse_objective(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    sniffer: &SnifferNet,
    targets: &[usize],
    horizon: usize,
) -> Result<f64> {
    let pairs = build_pairs(stream, params, head, sniffer, targets, horizon)?;
    let mut alg = Plain::new(&sniffer.data);
    let layout = sniffer.layout();
    let loss = mse_loss(&mut alg, &layout, &pairs);
    Ok(alg.value(&loss)[0])
}

/// Objective plus gradient with respect to the sniffer MLP parameters.
pub fn mse_gradient(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    sniffer: &SnifferNet,
    targets: &[usize],
    horizon: usize,
) -> Result<(f64, Vec<f64>)> {
    let pairs = build_pairs(stream, params, head, sniffer, targets, horizon)?;
    let mut tape = Tape::new(&sniffer.data);
    let layout = sniffer.layout();
    let loss = mse_loss(&mut tape, &layout, &pairs);
    let value = tape.value(&loss)[0];
    let grad = tape.backward(loss);
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct SnifferOutput {
    pub net: SnifferNet,
    pub loss_trace: Vec<f64>,
}

/// Trains the relevance MLP against the leave-one-out teacher. The encoder
/// (and thus every detector score) is frozen throughout.
pub fn train_sniffer(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    targets: &[usize],
    hyper: &SnifferHyper,
) -> Result<SnifferOutput> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("sniffer training needs at least one target"));
    }
    let mut net = SnifferNet::init(stream, params, hyper);
    net.detector_hash = crate::model_io::detector_hash(params, head);

    // teacher pairs are fixed; precompute once
    let pairs = build_pairs(stream, params, head, &net, targets, hyper.horizon)?;
    let layout = net.layout();
    let mut opt = AdamW::new(net.data.len(), hyper.lr, hyper.weight_decay);
    let mut trace = Vec::with_capacity(hyper.epochs + 1);
    for epoch in 0..hyper.epochs {
        let mut tape = Tape::new(&net.data);
        let loss = mse_loss(&mut tape, &layout, &pairs);
        let value = tape.value(&loss)[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss: value });
        }
        trace.push(value);
        let grad = tape.backward(loss);
        opt.step(&mut net.data, &grad, None, None);
    }
    let mut alg = Plain::new(&net.data);
    let final_loss = mse_loss(&mut alg, &layout, &pairs);
    trace.push(alg.value(&final_loss)[0]);
    net.trained = true;
    Ok(SnifferOutput { net, loss_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{detect, finetune, FinetuneHyper, HeadDims};
    use crate::encoder::{EncoderDims, TrainHyper};
    use crate::event_graph::synth::{default_attack_script, generate_synthetic, ScenarioConfig};
    use approx::assert_relative_eq;

    fn fixture() -> (EventStream, EncoderParams, DetectorHead) {
        let cfg = ScenarioConfig {
            num_users: 4,
            duration: 30_000.0,
            attack_script: default_attack_script(),
            gap_scale: 1.0,
            rng_seed: 5,
            session_gap_mean: 14_400.0,
            attack_start_frac: 0.3,
        };
        let stream = generate_synthetic(&cfg).unwrap();
        let pattern = crate::pattern::tests::chain_pattern();
        let alignment =
            crate::pattern::align(&stream, &pattern, 1_000_000).unwrap().alignments.remove(0);
        let spec = crate::augment::AugmentationSpec { rng_seed: 3, ..Default::default() };
        let erosion = crate::augment::erode(&stream, &alignment, &pattern, &spec).unwrap();
        let dims = EncoderDims { d_time: 4, d_mem: 8, d_emb: 8 };
        let pre = crate::encoder::pretrain(
            &stream,
            &[erosion],
            dims,
            &TrainHyper { epochs: 5, ..Default::default() },
        )
        .unwrap();
        let tuned = finetune(
            &stream,
            &pre.params,
            &FinetuneHyper { epochs: 10, head_dims: HeadDims { d_hidden: 8 }, ..Default::default() },
        )
        .unwrap();
        (stream, tuned.params, tuned.head)
    }

    #[test]
    fn vec_event_is_the_documented_concatenation() {
        let (stream, params, _) = fixture();
        let hyper = SnifferHyper { d_hidden: 8, ..Default::default() };
        let net = SnifferNet::init(&stream, &params, &hyper);
        let e = stream.event(3);
        let v = net.vec_event(&stream, e);
        assert_eq!(v.len(), net.vec_dim);

        // by-hand assembly
        let mut expect = Vec::new();
        let pad = |out: &mut Vec<f64>,chunk: &[f64], to: usize| {
            out.extend_from_slice(chunk);
            out.extend(std::iter::repeat(0.0).take(to - chunk.len()));
        };
        pad(&mut expect, &stream.node(e.src).features, net.max_node_feat);
        pad(&mut expect, &stream.node(e.dst).features, net.max_node_feat);
        expect.extend(crate::encoder::rte(e.timestamp, &params).unwrap());
        pad(&mut expect, &e.edge_attrs, net.max_edge_attr);
        assert_eq!(v, expect);

        // two events differing only in timestamp differ only in the rte block
        let a = stream.event(1);
        let later = stream
            .events()
            .iter()
            .find(|x| x.src == a.src && x.dst == a.dst && x.edge_type == a.edge_type && x.timestamp > a.timestamp && x.edge_attrs == a.edge_attrs);
        if let Some(later) = later {
            let va = net.vec_event(&stream, a);
            let vb = net.vec_event(&stream, later);
            let t0 = 2 * net.max_node_feat;
            assert_eq!(va[..t0], vb[..t0]);
            assert_eq!(va[t0 + net.d_time..], vb[t0 + net.d_time..]);
            assert_ne!(va[t0..t0 + net.d_time], vb[t0..t0 + net.d_time]);
        }
    }

    #[test]
    fn zero_net_scores_half_and_ordering_is_enforced() {
        let (stream, params, _) = fixture();
        let net = SnifferNet::zeroed(&stream, &params);
        assert_eq!(relevance(&net, &stream, 1, 5).unwrap(), 0.5);
        assert!(relevance(&net, &stream, 5, 5).is_err());
        assert!(relevance(&net, &stream, 7, 5).is_err());
    }

    #[test]
    fn batch_equals_one_by_one() {
        let (stream, params, _) = fixture();
        let hyper = SnifferHyper { d_hidden: 8, ..Default::default() };
        let net = SnifferNet::init(&stream, &params, &hyper);
        let k = 40.min(stream.n_events());
        let candidates: Vec<usize> = (1..k).collect();
        let batch = relevance_batch(&net, &stream, &candidates, k).unwrap();
        for (i, &j) in candidates.iter().enumerate() {
            assert_eq!(batch[i], relevance(&net, &stream, j, k).unwrap());
        }
    }

    #[test]
    fn teacher_labels_are_normalized() {
        let (stream, params, head) = fixture();
        let k = stream.attack_ordinals()[1];
        let labels = teacher_labels(&stream, &params, &head, k, 50).unwrap();
        assert!(!labels.is_empty());
        let lo = labels.iter().map(|(_, l)| *l).fold(f64::INFINITY, f64::min);
        let hi = labels.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 0.0 && hi <= 1.0);
        assert_relative_eq!(lo, 0.0);
        assert_relative_eq!(hi, 1.0);
    }

    #[test]
    fn training_learns_teacher_and_freezes_detector() {
        let (stream, params, head) = fixture();
        let targets: Vec<usize> = stream.attack_ordinals().into_iter().take(2).collect();
        let before = detect(&stream, &params, &head).unwrap();
        let hyper = SnifferHyper { d_hidden: 8, epochs: 80, horizon: 60, ..Default::default() };
        let out = train_sniffer(&stream, &params, &head, &targets, &hyper).unwrap();
        let after = detect(&stream, &params, &head).unwrap();
        assert_eq!(before, after, "detector scores must be bit-identical");
        assert!(out.loss_trace.last().unwrap() < out.loss_trace.first().unwrap());

        // top-10 overlap between sniffer ranking and teacher ranking
        let k = targets[1];
        let teacher = teacher_labels(&stream, &params, &head, k, hyper.horizon).unwrap();
        let mut by_teacher = teacher.clone();
        by_teacher.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let cands: Vec<usize> = teacher.iter().map(|(j, _)| *j).collect();
        let scores = relevance_batch(&out.net, &stream, &cands, k).unwrap();
        let mut by_net: Vec<(usize, f64)> = cands.iter().copied().zip(scores).collect();
        by_net.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let top = 10.min(by_teacher.len());
        let t10: std::collections::BTreeSet<usize> =
            by_teacher.iter().take(top).map(|(j, _)| *j).collect();
        let n10: std::collections::BTreeSet<usize> =
            by_net.iter().take(top).map(|(j, _)| *j).collect();
        let overlap = t10.intersection(&n10).count();
        assert!(overlap * 10 >= top * 6, "overlap {overlap} of {top}");

        // non-degeneracy: trained scores vary across candidates
        let mean = by_net.iter().map(|(_, s)| s).sum::<f64>() / by_net.len() as f64;
        let var =
            by_net.iter().map(|(_, s)| (s - mean) * (s - mean)).sum::<f64>() / by_net.len() as f64;
        assert!(var > 0.0);
    }

    #[test]
    fn zero_delta_candidate_gets_zero_teacher_label() {
        let (stream, params, head) = fixture();
        let k = stream.attack_ordinals()[1];
        let labels = teacher_labels(&stream, &params, &head, k, 80).unwrap();
        // the minimum-delta candidate is exactly 0 after min-max
        assert!(labels.iter().any(|(_, l)| *l == 0.0));
    }

    #[test]
    fn determinism_given_seed() {
        let (stream, params, head) = fixture();
        let targets = vec![stream.attack_ordinals()[0]];
        let hyper = SnifferHyper { d_hidden: 8, epochs: 10, horizon: 30, ..Default::default() };
        let a = train_sniffer(&stream, &params, &head, &targets, &hyper).unwrap();
        let b = train_sniffer(&stream, &params, &head, &targets, &hyper).unwrap();
        assert_eq!(a.net.data, b.net.data);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let (stream, params, head) = fixture();
        let targets = vec![stream.attack_ordinals()[0]];
        let hyper = SnifferHyper { d_hidden: 4, horizon: 10, ..Default::default() };
        let mut net = SnifferNet::init(&stream, &params, &hyper);
        let (_, grad) = mse_gradient(&stream, &params, &head, &net, &targets, 10).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..net.data.len() {
            let orig = net.data[i];
            net.data[i] = orig + h;
            let fp = mse_objective(&stream, &params, &head, &net, &targets, 10).unwrap();
            net.data[i] = orig - h;
            let fm = mse_objective(&stream, &params, &head, &net, &targets, 10).unwrap();
            net.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let diff = (grad[i] - fd).abs();
            let rel = if diff <= 1e-8 { 0.0 } else { diff / grad[i].abs().max(fd.abs()) };
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
