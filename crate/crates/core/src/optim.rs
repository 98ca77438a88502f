//! AdamW with decoupled weight decay and an inverse-time learning-rate decay.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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
            weight_decay: 1e-2,
        }
    }
}

/// `lr(t) = base / (1 + t / decay_steps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_steps: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-3,
            decay_steps: 2000.0,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        self.base / (1.0 + step as f64 / self.decay_steps)
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Entries set to `false` skip weight decay.
    decay_mask: Vec<bool>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize, config: AdamWConfig) -> Self {
        AdamW {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            decay_mask: vec![true; n_params],
            t: 0,
        }
    }

    pub fn with_decay_mask(mut self, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), self.m.len());
        self.decay_mask = mask;
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let c = self.config;
        self.t += 1;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if self.decay_mask[i] {
                params[i] -= lr * c.weight_decay * params[i];
            }
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
}
