use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::tensor::{Mat, Scalar};

/// Learning rate for optimizer update `step` (1-based; step 0 is 0).
///
/// Linear warmup to `peak` over `warmup` updates, then `peak * sqrt(warmup / step)`.
/// With `warmup == 0` the rate is constant.
pub fn lr_at(step: u64, peak: f64, warmup: u64) -> f64 {
    if step == 0 {
        0.0
    } else if warmup == 0 {
        peak
    } else if step <= warmup {
        peak * step as f64 / warmup as f64
    } else {
        peak * (warmup as f64 / step as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay; norm gains are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    pub t: u64,
    m: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new<G: Scalar>(params: &ModelParams<G>, config: AdamWConfig) -> Self {
        let zeros = || params.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
        AdamW {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update with learning rate `lr`; missing gradients count as zero.
    pub fn step(&mut self, params: &mut ModelParams<F>, grads: &[Option<Mat<F>>], lr: f64) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (F::from_f64(c.beta1), F::from_f64(c.beta2));
        let (one_b1, one_b2) = (F::from_f64(1.0 - c.beta1), F::from_f64(1.0 - c.beta2));
        let step_size = F::from_f64(lr / bc1);
        let inv_bc2 = F::from_f64(1.0 / bc2);
        let eps = F::from_f64(c.eps);
        for i in 0..params.tensors.len() {
            let decay = if params.is_norm(i) { 0.0 } else { c.weight_decay };
            let shrink = F::from_f64(1.0 - lr * decay);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = &mut params.tensors[i];
            let g = grads[i].as_ref();
            for j in 0..p.data.len() {
                let gj = g.map_or(F::zero(), |g| g.data[j]);
                m.data[j] = b1 * m.data[j] + one_b1 * gj;
                v.data[j] = b2 * v.data[j] + one_b2 * gj * gj;
                let denom = (v.data[j] * inv_bc2).sqrt() + eps;
                p.data[j] = p.data[j] * shrink - step_size * m.data[j] / denom;
            }
        }
    }
}
