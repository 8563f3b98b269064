//! AdamW with a linearly decaying learning rate and no warmup.

use serde::{Deserialize, Serialize};

use super::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// `lr * (1 - step / total)`, clamped at zero.
pub fn linear_decay(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - step as f64 / total as f64).max(0.0)
}

pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
    t: u32,
    total_steps: usize,
}

impl AdamW {
    pub fn new(params: &ModelParams, cfg: AdamWConfig, total_steps: usize) -> Self {
        let n = params.data.len();
        Self { cfg, m: vec![0.0; n], v: vec![0.0; n], decay: params.layout.decay_mask(), t: 0, total_steps }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn current_lr(&self) -> f64 {
        linear_decay(self.cfg.learning_rate, self.t as usize, self.total_steps)
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64]) {
        let lr = self.current_lr();
        self.t += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.data.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let mut p = params.data[i];
            if self.decay[i] {
                p -= lr * weight_decay * p;
            }
            params.data[i] = p - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

pub fn grad_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}
