//! Adam over flat parameter slices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Shared step counter and hyper-parameters; each tensor keeps its own [`Moments`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub lr: f64,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Self { cfg, lr, t: 0 }
    }

    /// Advances the step counter; call once per optimization step before `update`.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn update(&self, moments: &mut Moments, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), moments.m.len());
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let t = self.t.max(1);
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            moments.m[i] = beta1 * moments.m[i] + (1.0 - beta1) * g;
            moments.v[i] = beta2 * moments.v[i] + (1.0 - beta2) * g * g;
            let m_hat = moments.m[i] / c1;
            let v_hat = moments.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
