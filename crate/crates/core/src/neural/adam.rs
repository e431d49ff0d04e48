use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn for_net(net: &Mlp, lr: f64) -> Self {
        Adam::new(net.param_count(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Returns `Ok(false)` and leaves everything untouched
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::domain(format!(
                "adam expects {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(true)
    }

    pub fn step_net(&mut self, net: &mut Mlp, grads: &[f64]) -> Result<bool> {
        if !grads.iter().all(|g| g.is_finite()) {
            return Ok(false);
        }
        net.update_params(|p| self.step(p, grads))
    }
}
