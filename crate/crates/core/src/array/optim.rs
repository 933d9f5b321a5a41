//! First-order optimizers over a [`ParamStore`].
//!
//! Parameters are visited in registration order, so given the same seed,
//! config and data order the trajectory is bit-identical across runs.

use super::{ArrayError, ParamStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Stateful optimizer. Steps every trainable parameter using the gradient
/// accumulated in `DiffArray::grad`; a trainable parameter without a
/// populated gradient is an error.
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Optimizer {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Apply one update. `grad_scale` is multiplied into every gradient
    /// first (used to average over an accumulation window).
    pub fn step(&mut self, store: &mut ParamStore, grad_scale: f64) -> Result<(), ArrayError> {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let name_missing = {
                let arr = store.get(id);
                arr.requires_grad && arr.grad.is_none()
            };
            if name_missing {
                return Err(ArrayError::MissingGrad(store.name(id).to_string()));
            }
            let slot = id.0;
            let arr = store.get_mut(id);
            if !arr.requires_grad {
                continue;
            }
            let grad = arr.grad.as_ref().unwrap();
            match self.cfg.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in arr.values.iter_mut().zip(grad.iter()) {
                        *p -= self.cfg.lr * g * grad_scale;
                    }
                }
                OptimizerKind::Adam => {
                    let n = arr.values.len();
                    let mom = self.moments[slot].get_or_insert_with(|| Moments {
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                    });
                    for i in 0..n {
                        let g = grad[i] * grad_scale;
                        mom.m[i] = self.cfg.beta1 * mom.m[i] + (1.0 - self.cfg.beta1) * g;
                        mom.v[i] = self.cfg.beta2 * mom.v[i] + (1.0 - self.cfg.beta2) * g * g;
                        let mhat = mom.m[i] / bc1;
                        let vhat = mom.v[i] / bc2;
                        arr.values[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
