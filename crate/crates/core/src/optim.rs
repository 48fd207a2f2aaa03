//! Bias-corrected Adam.

use std::collections::HashMap;

use crate::params::ParamStore;
use crate::tape::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the shared step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: &str) -> Option<&[f64]> {
        self.moments.get(id).map(|(m, _)| m.as_slice())
    }

    pub fn second_moment(&self, id: &str) -> Option<&[f64]> {
        self.moments.get(id).map(|(_, v)| v.as_slice())
    }
}

/// One Adam step over every trainable parameter in `params`.
///
/// A parameter without an entry in `grads` is updated as if its gradient
/// were zero, so its moments still decay.
pub fn adam_update(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, cfg: &Adam) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<String> = params
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.id.clone())
        .collect();
    for id in ids {
        let grad = grads.get(&id).map(|g| g.data());
        let theta = params.tensor_mut(&id).expect("id taken from the store");
        let n = theta.len();
        let (m, v) = state
            .moments
            .entry(id)
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let data = theta.data_mut();
        for i in 0..n {
            let g = grad.map_or(0.0, |g| g[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}
