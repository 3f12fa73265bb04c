//! Small dense-vector math layer used by the encoder, detector head, and
//! sniffer: a flat parameter store, a forward-pass algebra implemented both
//! directly on `f64` vectors and on a reverse-mode tape, and an AdamW
//! optimizer.
//!
//! Model code is written once against [`Alg`]; inference runs it through
//! [`Plain`] and training through [`tape::Tape`], so the scored values and
//! the differentiated values come from the same code path.

pub mod optim;
pub mod tape;

/// A segment of the flat parameter vector, interpreted as a row-major
/// `rows x cols` matrix (or a plain vector when `cols == 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seg {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Seg {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The forward-pass algebra. `V` is either an owned `Vec<f64>` ([`Plain`])
/// or a handle into the gradient tape ([`tape::Tape`]).
pub trait Alg {
    type V: Clone;

    fn params(&self) -> &[f64];

    fn constant(&mut self, v: Vec<f64>) -> Self::V;

    /// A vector-shaped parameter segment (biases).
    fn param_vec(&mut self, seg: Seg) -> Self::V;

    /// y = W x for the matrix stored at `seg`.
    fn matvec(&mut self, seg: Seg, x: &Self::V) -> Self::V;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;

    fn concat(&mut self, parts: &[&Self::V]) -> Self::V;

    fn sigmoid(&mut self, x: &Self::V) -> Self::V;

    fn tanh(&mut self, x: &Self::V) -> Self::V;

    /// log(1 + e^x), computed stably.
    fn softplus(&mut self, x: &Self::V) -> Self::V;

    /// Elementwise product.
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;

    /// y_i = k * x_i + b.
    fn affine(&mut self, x: &Self::V, k: f64, b: f64) -> Self::V;

    fn softmax(&mut self, x: &Self::V) -> Self::V;

    /// Length-1 dot product.
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;

    /// v scaled by the length-1 scalar s.
    fn scale_by(&mut self, v: &Self::V, s: &Self::V) -> Self::V;

    /// Peek at the numeric value. Must not be used to branch the forward
    /// computation on parameter-dependent quantities.
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a [f64];

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        let nb = self.affine(b, -1.0, 0.0);
        self.add(a, &nb)
    }

    fn zeros(&mut self, len: usize) -> Self::V {
        self.constant(vec![0.0; len])
    }

    /// Mean of a non-empty list of equal-length vectors.
    fn mean_of(&mut self, vs: &[Self::V]) -> Self::V {
        assert!(!vs.is_empty());
        let mut acc = vs[0].clone();
        for v in &vs[1..] {
            acc = self.add(&acc, v);
        }
        self.affine(&acc, 1.0 / vs.len() as f64, 0.0)
    }
}

/// Direct evaluation on `f64` vectors; no gradient bookkeeping.
pub struct Plain<'p> {
    params: &'p [f64],
}

impl<'p> Plain<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Plain { params }
    }
}

pub(crate) fn stable_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl Alg for Plain<'_> {
    type V = Vec<f64>;

    fn params(&self) -> &[f64] {
        self.params
    }

    fn constant(&mut self, v: Vec<f64>) -> Vec<f64> {
        v
    }

    fn param_vec(&mut self, seg: Seg) -> Vec<f64> {
        debug_assert_eq!(seg.cols, 1);
        self.params[seg.offset..seg.offset + seg.rows].to_vec()
    }

    fn matvec(&mut self, seg: Seg, x: &Vec<f64>) -> Vec<f64> {
        debug_assert_eq!(seg.cols, x.len(), "matvec shape mismatch");
        let mut y = vec![0.0; seg.rows];
        for r in 0..seg.rows {
            let row = &self.params[seg.offset + r * seg.cols..seg.offset + (r + 1) * seg.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x.iter()) {
                acc += w * xi;
            }
            y[r] = acc;
        }
        y
    }

    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
    }

    fn concat(&mut self, parts: &[&Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            out.extend_from_slice(p);
        }
        out
    }

    fn sigmoid(&mut self, x: &Vec<f64>) -> Vec<f64> {
        x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
    }

    fn tanh(&mut self, x: &Vec<f64>) -> Vec<f64> {
        x.iter().map(|&v| v.tanh()).collect()
    }

    fn softplus(&mut self, x: &Vec<f64>) -> Vec<f64> {
        x.iter().map(|&v| stable_softplus(v)).collect()
    }

    fn mul(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
    }

    fn affine(&mut self, x: &Vec<f64>, k: f64, b: f64) -> Vec<f64> {
        x.iter().map(|&v| k * v + b).collect()
    }

    fn softmax(&mut self, x: &Vec<f64>) -> Vec<f64> {
        let mut y = x.clone();
        softmax_in_place(&mut y);
        y
    }

    fn dot(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        debug_assert_eq!(a.len(), b.len());
        vec![a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()]
    }

    fn scale_by(&mut self, v: &Vec<f64>, s: &Vec<f64>) -> Vec<f64> {
        debug_assert_eq!(s.len(), 1);
        v.iter().map(|&x| x * s[0]).collect()
    }

    fn value<'a>(&'a self, v: &'a Vec<f64>) -> &'a [f64] {
        v
    }
}
