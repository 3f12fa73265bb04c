//! AdamW — Adam with decoupled weight decay — plus seeded parameter
//! initialization. Per-coordinate learning-rate and weight-decay scales let
//! fine-tuning run the encoder group at a reduced rate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Seg;

#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One update step. `lr_scale` / `wd_scale` multiply the base rate and
    /// decay per coordinate when given.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr_scale: Option<&[f64]>,
        wd_scale: Option<&[f64]>,
    ) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let lr = self.lr * lr_scale.map_or(1.0, |s| s[i]);
            let wd = self.weight_decay * wd_scale.map_or(1.0, |s| s[i]);
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * params[i]);
        }
    }
}

/// Uniform ±1/√fan_in init for a matrix segment; biases (cols == 1 segments
/// flagged by the caller) are zeroed instead.
pub fn init_matrix(rng: &mut ChaCha8Rng, data: &mut [f64], seg: Seg) {
    let bound = 1.0 / (seg.cols as f64).sqrt();
    for i in 0..seg.len() {
        data[seg.offset + i] = rng.gen_range(-bound..bound);
    }
}

pub fn init_zero(data: &mut [f64], seg: Seg) {
    for i in 0..seg.len() {
        data[seg.offset + i] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.5, 0.5, 0.5];
        let mut opt = AdamW::new(3, 0.0, 0.1);
        opt.step(&mut p, &g, None, None);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn step_moves_against_gradient() {
        let mut p = vec![0.0];
        let g = vec![1.0];
        let mut opt = AdamW::new(1, 0.1, 0.0);
        opt.step(&mut p, &g, None, None);
        assert!(p[0] < 0.0);
    }
}
