use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::DiffError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Decoupled L2 coefficient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with decoupled weight decay. Moment buffers are indexed like the
/// store they were created for.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let first = store.iter().map(|(_, p)| vec![0.0; p.array.len()]).collect::<Vec<_>>();
        let second = first.clone();
        Self { config, step_count: 0, first, second }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// Updates every trainable parameter from its gradient, then clears all
    /// gradients. Fails without touching any value if a trainable parameter
    /// has no gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), DiffError> {
        if store.len() != self.first.len() {
            return Err(DiffError::Invalid("optimizer was created for a different parameter store".into()));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.array.grad.is_none()) {
            return Err(DiffError::MissingGrad(p.name.clone()));
        }
        self.step_count += 1;
        let AdamConfig { learning_rate: lr, weight_decay: wd, beta1: b1, beta2: b2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let Some(grad) = p.array.grad.take() else { continue };
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
            for (k, value) in p.array.values.iter_mut().enumerate() {
                let g = grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *value -= lr * (update + wd * *value);
            }
        }
        Ok(())
    }
}
