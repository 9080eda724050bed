//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{Gradients, NumericsError, ParamId, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment accumulators, created lazily per parameter on the
/// first step that touches it.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.moments.get(id.0)?.as_ref().map(|(m, _)| m.as_slice())
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.moments.get(id.0)?.as_ref().map(|(_, v)| v.as_slice())
    }

    /// One optimizer step over every trainable parameter. Parameters with
    /// `requires_grad == false` are never touched; trainable parameters
    /// without a gradient entry are treated as having a zero gradient.
    pub fn step<T: Real>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &Gradients<T>,
    ) -> Result<(), NumericsError> {
        for (id, g) in grads.iter() {
            if id.0 >= params.len() {
                return Err(NumericsError::Index {
                    index: id.0,
                    len: params.len(),
                });
            }
            let p = params.get(id);
            if g.len() != p.len() {
                return Err(NumericsError::Dimension {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        self.step += 1;
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        for id in params.trainable_ids() {
            let tensor = params.get_mut(id);
            let n = tensor.len();
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = grads.get(id);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad.map_or(0.0, |g| g[i].as_f64());
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let updated = w.as_f64() * decay - lr * m_hat / (v_hat.sqrt() + eps);
                *w = T::from_f64_lossy(updated);
            }
        }
        Ok(())
    }
}
