//! Adam with bias-corrected moment estimates.

use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }
}

/// Optimizer state: one pair of moment buffers per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|p| alloc::vec![0.0; p.value.len()]).collect();
        Self { config, v: m.clone(), m, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients held in `store`. A non-finite
    /// gradient aborts before any parameter or moment is touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        if let Some(bad) = store.iter().find(|p| !p.grad.all_finite()) {
            return Err(TensorError::NonFiniteGradient { param: bad.name.to_string() });
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let value = store.value_mut(id).data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..value.len() {
                let g = grad[i] + c.weight_decay * value[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= c.learning_rate * m_hat / (libm::sqrt(v_hat) + c.epsilon);
            }
        }
        Ok(())
    }
}

