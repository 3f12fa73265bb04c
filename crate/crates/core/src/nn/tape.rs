//! Reverse-mode differentiation on a Wengert list.
//!
//! Each [`Alg`] call appends one node; [`Tape::backward`] walks the list in
//! reverse and accumulates parameter gradients into a flat buffer matching
//! the parameter vector layout. Values are never mutated once recorded, so
//! model code can freely keep handles to earlier states (the encoder's
//! per-node memory does exactly that).

use super::{softmax_in_place, stable_softplus, Alg, Seg};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    ParamVec { seg: Seg },
    MatVec { seg: Seg, x: usize },
    Add { a: usize, b: usize },
    Concat { parts: Vec<usize> },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Softplus { x: usize },
    Mul { a: usize, b: usize },
    Affine { x: usize, k: f64 },
    Softmax { x: usize },
    Dot { a: usize, b: usize },
    ScaleBy { v: usize, s: usize },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Gradient of the scalar node `root` with respect to every parameter.
    pub fn backward(&self, root: Var) -> Vec<f64> {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        let mut pgrad = vec![0.0; self.params.len()];
        adj[root.0][0] = 1.0;

        for i in (0..=root.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Const => {}
                Op::ParamVec { seg } => {
                    for (j, gj) in g.iter().enumerate() {
                        pgrad[seg.offset + j] += gj;
                    }
                }
                Op::MatVec { seg, x } => {
                    let xv = &self.nodes[*x].value;
                    let xa = &mut adj[*x];
                    for r in 0..seg.rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let base = seg.offset + r * seg.cols;
                        for c in 0..seg.cols {
                            pgrad[base + c] += gr * xv[c];
                            xa[c] += self.params[base + c] * gr;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (j, gj) in g.iter().enumerate() {
                        adj[*a][j] += gj;
                    }
                    for (j, gj) in g.iter().enumerate() {
                        adj[*b][j] += gj;
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[*p].value.len();
                        for j in 0..len {
                            adj[*p][j] += g[off + j];
                        }
                        off += len;
                    }
                }
                Op::Sigmoid { x } => {
                    let y = &self.nodes[i].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[*x][j] += gj * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[i].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[*x][j] += gj * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Softplus { x } => {
                    let xv = &self.nodes[*x].value;
                    for (j, gj) in g.iter().enumerate() {
                        let s = 1.0 / (1.0 + (-xv[j]).exp());
                        adj[*x][j] += gj * s;
                    }
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[*a][j] += gj * bv[j];
                    }
                    for (j, gj) in g.iter().enumerate() {
                        adj[*b][j] += gj * av[j];
                    }
                }
                Op::Affine { x, k } => {
                    for (j, gj) in g.iter().enumerate() {
                        adj[*x][j] += k * gj;
                    }
                }
                Op::Softmax { x } => {
                    // dx = y .* (g - <g, y>)
                    let y = &self.nodes[i].value;
                    let gy: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..g.len() {
                        adj[*x][j] += y[j] * (g[j] - gy);
                    }
                }
                Op::Dot { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let g0 = g[0];
                    for j in 0..av.len() {
                        adj[*a][j] += g0 * bv[j];
                    }
                    for j in 0..bv.len() {
                        adj[*b][j] += g0 * av[j];
                    }
                }
                Op::ScaleBy { v, s } => {
                    let vv = &self.nodes[*v].value;
                    let sv = self.nodes[*s].value[0];
                    let mut acc = 0.0;
                    for (j, gj) in g.iter().enumerate() {
                        adj[*v][j] += gj * sv;
                        acc += gj * vv[j];
                    }
                    adj[*s][0] += acc;
                }
            }
        }
        pgrad
    }
}

impl Alg for Tape<'_> {
    type V = Var;

    fn params(&self) -> &[f64] {
        self.params
    }

    fn constant(&mut self, v: Vec<f64>) -> Var {
        self.push(v, Op::Const)
    }

    fn param_vec(&mut self, seg: Seg) -> Var {
        debug_assert_eq!(seg.cols, 1);
        let value = self.params[seg.offset..seg.offset + seg.rows].to_vec();
        self.push(value, Op::ParamVec { seg })
    }

    fn matvec(&mut self, seg: Seg, x: &Var) -> Var {
        let xv = self.val(*x);
        debug_assert_eq!(seg.cols, xv.len(), "matvec shape mismatch");
        let mut y = vec![0.0; seg.rows];
        for r in 0..seg.rows {
            let row = &self.params[seg.offset + r * seg.cols..seg.offset + (r + 1) * seg.cols];
            y[r] = row.iter().zip(xv.iter()).map(|(w, v)| w * v).sum();
        }
        self.push(y, Op::MatVec { seg, x: x.0 })
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let value: Vec<f64> = self
            .val(*a)
            .iter()
            .zip(self.val(*b).iter())
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add { a: a.0, b: b.0 })
    }

    fn concat(&mut self, parts: &[&Var]) -> Var {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(self.val(**p));
        }
        let idx = parts.iter().map(|p| p.0).collect();
        self.push(value, Op::Concat { parts: idx })
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let value: Vec<f64> = self.val(*x).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        self.push(value, Op::Sigmoid { x: x.0 })
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let value: Vec<f64> = self.val(*x).iter().map(|&v| v.tanh()).collect();
        self.push(value, Op::Tanh { x: x.0 })
    }

    fn softplus(&mut self, x: &Var) -> Var {
        let value: Vec<f64> = self.val(*x).iter().map(|&v| stable_softplus(v)).collect();
        self.push(value, Op::Softplus { x: x.0 })
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let value: Vec<f64> = self
            .val(*a)
            .iter()
            .zip(self.val(*b).iter())
            .map(|(x, y)| x * y)
            .collect();
        self.push(value, Op::Mul { a: a.0, b: b.0 })
    }

    fn affine(&mut self, x: &Var, k: f64, b: f64) -> Var {
        let value: Vec<f64> = self.val(*x).iter().map(|&v| k * v + b).collect();
        self.push(value, Op::Affine { x: x.0, k })
    }

    fn softmax(&mut self, x: &Var) -> Var {
        let mut value = self.val(*x).to_vec();
        softmax_in_place(&mut value);
        self.push(value, Op::Softmax { x: x.0 })
    }

    fn dot(&mut self, a: &Var, b: &Var) -> Var {
        let value = vec![self
            .val(*a)
            .iter()
            .zip(self.val(*b).iter())
            .map(|(x, y)| x * y)
            .sum()];
        self.push(value, Op::Dot { a: a.0, b: b.0 })
    }

    fn scale_by(&mut self, v: &Var, s: &Var) -> Var {
        debug_assert_eq!(self.val(*s).len(), 1);
        let sv = self.val(*s)[0];
        let value: Vec<f64> = self.val(*v).iter().map(|&x| x * sv).collect();
        self.push(value, Op::ScaleBy { v: v.0, s: s.0 })
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a [f64] {
        self.val(*v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` at `params`.
    fn fd_grad(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-6;
        let mut g = vec![0.0; params.len()];
        let mut p = params.to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn scalar_net(alg: &mut impl Alg, x: &[f64]) -> f64 {
        let n = alg.params().len();
        // params: 2x3 matrix, 2 bias, 2x2 matrix, then a 1x2 read-out row
        assert_eq!(n, 6 + 2 + 4 + 2);
        let w1 = Seg { offset: 0, rows: 2, cols: 3 };
        let b1 = Seg { offset: 6, rows: 2, cols: 1 };
        let w2 = Seg { offset: 8, rows: 2, cols: 2 };
        let w3 = Seg { offset: 12, rows: 1, cols: 2 };

        let xv = alg.constant(x.to_vec());
        let h = alg.matvec(w1, &xv);
        let b = alg.param_vec(b1);
        let h = alg.add(&h, &b);
        let h = alg.tanh(&h);
        let a = alg.matvec(w2, &h);
        let a = alg.softmax(&a);
        let mixed = alg.mul(&a, &h);
        let sig = alg.sigmoid(&mixed);
        let sp = alg.softplus(&sig);
        let d = alg.dot(&sp, &h);
        let y = alg.matvec(w3, &sp);
        let scaled = alg.scale_by(&y, &d);
        let out = alg.affine(&scaled, 0.5, 0.1);
        alg.value(&out)[0]
    }

    #[test]
    fn tape_matches_plain_forward() {
        let params: Vec<f64> = (0..14).map(|i| 0.1 * (i as f64) - 0.6).collect();
        let x = [0.3, -0.2, 0.9];
        let mut plain = super::super::Plain::new(&params);
        let direct = scalar_net(&mut plain, &x);
        let mut tape = Tape::new(&params);
        let taped = scalar_net(&mut tape, &x);
        assert_eq!(direct, taped);
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let params: Vec<f64> = (0..14).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
        let x = [0.3, -0.2, 0.9];

        let mut tape = Tape::new(&params);
        let n = tape.params().len();
        assert_eq!(n, 14);
        // rebuild the net keeping the final Var for backward
        let w1 = Seg { offset: 0, rows: 2, cols: 3 };
        let b1 = Seg { offset: 6, rows: 2, cols: 1 };
        let w2 = Seg { offset: 8, rows: 2, cols: 2 };
        let w3 = Seg { offset: 12, rows: 1, cols: 2 };
        let xv = tape.constant(x.to_vec());
        let h = tape.matvec(w1, &xv);
        let b = tape.param_vec(b1);
        let h = tape.add(&h, &b);
        let h = tape.tanh(&h);
        let a = tape.matvec(w2, &h);
        let a = tape.softmax(&a);
        let mixed = tape.mul(&a, &h);
        let sig = tape.sigmoid(&mixed);
        let sp = tape.softplus(&sig);
        let d = tape.dot(&sp, &h);
        let y = tape.matvec(w3, &sp);
        let scaled = tape.scale_by(&y, &d);
        let out = tape.affine(&scaled, 0.5, 0.1);
        let grad = tape.backward(out);

        let fd = fd_grad(&params, |p| {
            let mut plain = super::super::Plain::new(p);
            scalar_net(&mut plain, &x)
        });

        for i in 0..params.len() {
            let (a, b) = (grad[i], fd[i]);
            let diff = (a - b).abs();
            assert!(
                diff <= 1e-7 || diff / a.abs().max(b.abs()) < 1e-6,
                "coordinate {i}: tape {a} vs fd {b}"
            );
        }
    }
}
