//! Contrastive pre-training: the original stream (plus the erosion's
//! random-walk views) provides positive node embeddings, eroded streams
//! provide negatives, and a bilinear discriminator against the positive
//! graph's readout separates them.
//!
//! The printed objective form lives in [`super::contrastive_loss`]; the
//! optimizer minimizes the standard binary cross-entropy
//!   −(1/(N+M)) [ Σ log D(h_i, s) + Σ log(1 − D(h̃_j, s)) ]
//! written with softplus for stability.

use crate::augment::ErosionResult;
use crate::error::{Error, Result};
use crate::event_graph::{EventStream, GraphView};
use crate::nn::optim::AdamW;
use crate::nn::tape::Tape;
use crate::nn::{Alg, Plain};

use super::{advance_state, embed_node, EncoderDims, EncoderParams, MemoryState};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { lr: 0.005, weight_decay: 0.0001, epochs: 40, rng_seed: 0 }
    }
}

/// Builds the BCE loss over positive (original + walk views) and negative
/// (eroded) node embeddings. Generic so the same construction is used for
/// plain evaluation and for the gradient tape.
fn bce_loss<A: Alg>(
    alg: &mut A,
    params: &EncoderParams,
    stream: &EventStream,
    erosions: &[ErosionResult],
) -> Result<A::V> {
    let full = GraphView::full(stream);
    let mut state = MemoryState::new();
    advance_state(alg, params, &full, &mut state);
    let now = full.eval_time();

    let mut pos = Vec::new();
    for node in state.touched().to_vec() {
        pos.push(embed_node(alg, params, stream, &mut state, node, now));
    }
    let n_graph = pos.len();
    if n_graph == 0 {
        return Err(Error::EmptyInput("positive stream has no events"));
    }

    for erosion in erosions {
        for view_ordinals in &erosion.walk_views {
            if view_ordinals.is_empty() {
                continue;
            }
            let view =
                GraphView::restricted(stream, stream.n_events() + 1, view_ordinals.clone())?;
            let mut wstate = MemoryState::new();
            advance_state(alg, params, &view, &mut wstate);
            for node in wstate.touched().to_vec() {
                pos.push(embed_node(alg, params, stream, &mut wstate, node, view.eval_time()));
            }
        }
    }

    let mut neg = Vec::new();
    for erosion in erosions {
        let eview = GraphView::full(&erosion.stream);
        let mut estate = MemoryState::new();
        advance_state(alg, params, &eview, &mut estate);
        let enow = eview.eval_time();
        for node in estate.touched().to_vec() {
            neg.push(embed_node(alg, params, &erosion.stream, &mut estate, node, enow));
        }
    }

    if pos.is_empty() {
        return Err(Error::EmptyInput("no positive nodes for contrastive training"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyInput("no negative nodes for contrastive training"));
    }

    // s = σ(mean h) over the positive graph's own embeddings
    let s = {
        let mean = alg.mean_of(&pos[..n_graph].to_vec());
        alg.sigmoid(&mean)
    };

    let mut terms: Vec<A::V> = Vec::with_capacity(pos.len() + neg.len());
    for h in &pos {
        let ws = alg.matvec(params.layout.disc, &s);
        let logit = alg.dot(h, &ws);
        let neg_logit = alg.affine(&logit, -1.0, 0.0);
        terms.push(alg.softplus(&neg_logit)); // −log σ(logit)
    }
    for h in &neg {
        let ws = alg.matvec(params.layout.disc, &s);
        let logit = alg.dot(h, &ws);
        terms.push(alg.softplus(&logit)); // −log(1 − σ(logit))
    }
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = alg.add(&acc, t);
    }
    Ok(alg.affine(&acc, 1.0 / terms.len() as f64, 0.0))
}

/// Training BCE objective at the given parameters.
pub fn contrastive_objective(
    stream: &EventStream,
    erosions: &[ErosionResult],
    params: &EncoderParams,
) -> Result<f64> {
    params.check_stream(stream)?;
    let mut alg = Plain::new(&params.data);
    let loss = bce_loss(&mut alg, params, stream, erosions)?;
    Ok(alg.value(&loss)[0])
}

/// Training BCE objective and its gradient with respect to every encoder
/// parameter (including the discriminator).
pub fn contrastive_gradient(
    stream: &EventStream,
    erosions: &[ErosionResult],
    params: &EncoderParams,
) -> Result<(f64, Vec<f64>)> {
    params.check_stream(stream)?;
    let mut tape = Tape::new(&params.data);
    let loss = bce_loss(&mut tape, params, stream, erosions)?;
    let value = tape.value(&loss)[0];
    let grad = tape.backward(loss);
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub params: EncoderParams,
    /// Loss before each epoch's step, plus a final evaluation.
    pub loss_trace: Vec<f64>,
}

/// Trains the encoder contrastively with AdamW. Deterministic given
/// `hyper.rng_seed` (parameter init) — the optimization itself draws no
/// randomness.
pub fn pretrain(
    stream: &EventStream,
    erosions: &[ErosionResult],
    dims: EncoderDims,
    hyper: &TrainHyper,
) -> Result<PretrainOutput> {
    if erosions.is_empty() {
        return Err(Error::EmptyInput("pretraining needs at least one erosion sample"));
    }
    let mut params = EncoderParams::init(stream.vocab(), dims, hyper.rng_seed);
    let mut opt = AdamW::new(params.data.len(), hyper.lr, hyper.weight_decay);
    let mut trace = Vec::with_capacity(hyper.epochs + 1);
    for epoch in 0..hyper.epochs {
        let (loss, grad) = contrastive_gradient(stream, erosions, &params)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss });
        }
        trace.push(loss);
        opt.step(&mut params.data, &grad, None, None);
    }
    let final_loss = contrastive_objective(stream, erosions, &params)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: hyper.epochs, loss: final_loss });
    }
    trace.push(final_loss);
    Ok(PretrainOutput { params, loss_trace: trace })
}
