//! Adam optimizer over an ordered list of parameter tensors.
//!
//! State is keyed by position in the tensor list, so any model that exposes
//! its parameters as slices in a canonical, stable order can be optimized: the
//! two-tower model and the id-embedding classifier both do.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::tower::{ModelGrads, TowerParams};

/// Adam hyperparameters (biased-moment decay rates and the denominator
/// epsilon). The learning rate is passed per step so schedules stay outside
/// the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "adam betas must lie in [0, 1) and eps must be > 0",
            ))
        }
    }
}

/// First/second moment estimates, one pair of buffers per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Completed steps (drives bias correction).
    t: u64,
}

impl AdamState {
    /// Zero-initialized state shaped like `tensors`.
    pub fn new(config: AdamConfig, tensor_sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        })
    }

    pub fn for_model(config: AdamConfig, params: &TowerParams) -> Result<Self> {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(config, &sizes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update:
    /// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
    /// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        self.t += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let mc = 1.0 - b1.powi(self.t as i32);
        let vc = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::DimensionMismatch {
                    expected: m.len(),
                    got: p.len().max(g.len()),
                });
            }
            for i in 0..m.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / mc;
                let v_hat = v[i] / vc;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.config.eps);
            }
        }
        Ok(())
    }

    /// Convenience wrapper for the two-tower model.
    pub fn step_model(
        &mut self,
        params: &mut TowerParams,
        grads: &ModelGrads,
        lr: f64,
    ) -> Result<()> {
        let mut tensors = params.tensors_mut();
        self.step(&mut tensors, &grads.tensors(), lr)
    }
}
