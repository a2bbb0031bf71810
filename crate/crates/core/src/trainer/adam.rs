use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over every array of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.values().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update. Nothing changes when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidInput(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.raw_dim() != store.get(id).raw_dim() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: store.get(id).dim(),
                    rhs: g.dim(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", store.name(id)),
                });
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for (((p, g), m), v) in store.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}
