//! Metrics: AUC for detection; fidelity, sparsity, fidelity-sparsity
//! curves, and AUFSC for explanations; plus the trivial random and
//! greedy leave-one-out explainer baselines.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{score_event, score_event_on_view, DetectorHead};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::event_graph::{EventStream, GraphView};
use crate::excavator::{init_root, simulate, Explanation, MctsConfig};
use crate::sniffer::teacher_labels;

/// Probability a random positive outranks a random negative, ties counted
/// half: the normalized Mann-Whitney U statistic via midranks.
pub fn auc(scored: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scored.iter().filter(|(_, y)| *y).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        // ranks i+1..=j, shared as the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if scored[idx].1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    /// Detector probabilities; fidelity bounded in [-1, 1].
    Probability,
    /// log(p/(1-p)); unbounded, comparable to reported magnitudes.
    Logit,
}

fn to_space(p: f64, space: ScoreSpace) -> f64 {
    match space {
        ScoreSpace::Probability => p,
        ScoreSpace::Logit => (p / (1.0 - p)).ln(),
    }
}

/// One target's scores: on the explanation view and on the full prior
/// graph, plus the full-graph decision that picks the fidelity branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityTerm {
    pub target: usize,
    pub p_restricted: f64,
    pub p_full: f64,
    pub flagged_attack: bool,
}

impl FidelityTerm {
    pub fn signed(&self, space: ScoreSpace) -> f64 {
        let r = to_space(self.p_restricted, space);
        let g = to_space(self.p_full, space);
        if self.flagged_attack {
            r - g
        } else {
            g - r
        }
    }
}

/// Mean branch-signed score change across targets.
pub fn fidelity(terms: &[FidelityTerm], space: ScoreSpace) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::EmptyInput("fidelity over zero explanations"));
    }
    Ok(terms.iter().map(|t| t.signed(space)).sum::<f64>() / terms.len() as f64)
}

/// Scores each explanation's event subset against the full prior graph.
pub fn fidelity_terms(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    explanations: &[Explanation],
) -> Result<Vec<FidelityTerm>> {
    if explanations.is_empty() {
        return Err(Error::EmptyInput("fidelity over zero explanations"));
    }
    explanations
        .iter()
        .map(|e| {
            let p_full = score_event(e.target, stream, params, head)?;
            let view =
                GraphView::restricted(stream, e.target, e.events.iter().copied().collect())?;
            let p_restricted = score_event_on_view(&view, params, head)?;
            Ok(FidelityTerm {
                target: e.target,
                p_restricted,
                p_full,
                flagged_attack: p_full > head.tau,
            })
        })
        .collect()
}

/// |R| / |G| with the containment check.
pub fn sparsity(r: &BTreeSet<usize>, g: &BTreeSet<usize>) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::EmptyInput("sparsity against an empty candidate set"));
    }
    if !r.is_subset(g) {
        return Err(Error::NotASubset);
    }
    Ok(r.len() as f64 / g.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsCurve {
    /// (sparsity, fidelity), sparsity strictly increasing.
    pub points: Vec<(f64, f64)>,
}

/// The default sparsity grid 0.1, 0.2, … 1.0.
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Sweeps prefixes of the explanation's importance ranking: at each level s
/// the top ⌈s·|G|⌉ ranked events form R and one fidelity term is evaluated.
pub fn fs_curve(
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    explanation: &Explanation,
    levels: &[f64],
    space: ScoreSpace,
) -> Result<FsCurve> {
    if levels.is_empty() {
        return Err(Error::EmptyInput("empty sparsity grid"));
    }
    let g = explanation.ranking.len();
    if g == 0 {
        return Err(Error::EmptyInput("explanation has no candidates"));
    }
    let p_full = score_event(explanation.target, stream, params, head)?;
    let flagged = p_full > head.tau;

    let mut levels = levels.to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();

    let mut points: Vec<(f64, f64)> = Vec::new();
    for &level in &levels {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::other(format!("sparsity level {level} outside [0,1]")));
        }
        let take = ((level * g as f64).ceil() as usize).clamp(1, g);
        let subset: Vec<usize> = explanation.ranking[..take].to_vec();
        let realized = take as f64 / g as f64;
        let view = GraphView::restricted(stream, explanation.target, subset)?;
        let p_r = score_event_on_view(&view, params, head)?;
        let term = FidelityTerm {
            target: explanation.target,
            p_restricted: p_r,
            p_full,
            flagged_attack: flagged,
        };
        let fid = term.signed(space);
        match points.last() {
            Some((s, _)) if *s == realized => {
                let last = points.len() - 1;
                points[last] = (realized, fid);
            }
            _ => points.push((realized, fid)),
        }
    }
    Ok(FsCurve { points })
}

/// Trapezoidal area under the fidelity-sparsity curve over its span.
pub fn aufsc(curve: &FsCurve) -> Result<f64> {
    if curve.points.len() < 2 {
        return Err(Error::EmptyInput("AUFSC needs at least two curve points"));
    }
    for w in curve.points.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::other("curve sparsity values must strictly increase"));
        }
    }
    let mut area = 0.0;
    for w in curve.points.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Random,
    GreedyLoo,
}

/// Trivial explainers standing in for learned competitors: a seeded random
/// subset, and the top leave-one-out detector deltas.
pub fn baseline_explain(
    kind: BaselineKind,
    stream: &EventStream,
    params: &EncoderParams,
    head: &DetectorHead,
    target: usize,
    size: usize,
    seed: u64,
    horizon: Option<usize>,
) -> Result<Explanation> {
    let root: Vec<usize> = init_root(stream, target, horizon)?.events.into_iter().collect();
    let ranking: Vec<usize> = match kind {
        BaselineKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut shuffled = root.clone();
            shuffled.shuffle(&mut rng);
            shuffled
        }
        BaselineKind::GreedyLoo => {
            let mut deltas = teacher_labels(stream, params, head, target, root.len())?;
            deltas.retain(|(j, _)| root.contains(j));
            deltas.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            deltas.into_iter().map(|(j, _)| j).collect()
        }
    };
    let size = size.clamp(1, ranking.len());
    let events: BTreeSet<usize> = ranking[..size].iter().copied().collect();
    let full = score_event(target, stream, params, head)?;
    let reward = simulate(&events, stream, params, head, target, full > head.tau)?;
    Ok(Explanation {
        target,
        events,
        reward,
        ranking,
        config: MctsConfig { rng_seed: seed, horizon, ..Default::default() },
    })
}

/// Minimal SVG line plot of one or more fidelity-sparsity curves.
pub fn fs_curve_svg(named: &[(&str, &FsCurve)]) -> String {
    let (w, h, ml, mb) = (460.0, 300.0, 50.0, 40.0);
    let (pw, ph) = (w - ml - 20.0, h - mb - 20.0);
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for (_, c) in named {
        for (_, f) in &c.points {
            lo = lo.min(*f);
            hi = hi.max(*f);
        }
    }
    let span = (hi - lo).max(1e-9);
    let x = |s: f64| ml + s * pw;
    let y = |f: f64| h - mb - (f - lo) / span * ph;
    let colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b"];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{ml}\" y1=\"{}\" x2=\"{ml}\" y2=\"20\" stroke=\"black\"/>\n",
        h - mb, w - 20.0, h - mb, h - mb
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">sparsity</text>\n",
        ml + pw / 2.0, h - 8.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">fidelity</text>\n",
        20.0 + ph / 2.0, 20.0 + ph / 2.0
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{tick}</text>\n",
            x(tick), h - mb + 14.0
        ));
    }
    for (i, (name, curve)) in named.iter().enumerate() {
        let color = colors[i % colors.len()];
        let pts: Vec<String> =
            curve.points.iter().map(|(s, f)| format!("{:.2},{:.2}", x(*s), y(*f))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            w - 130.0,
            30.0 + 14.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
