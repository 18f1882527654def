use serde::{Deserialize, Serialize};

use crate::netcore::{NetworkSpec, ParamGradient};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: ParamGradient,
    pub second_moment: ParamGradient,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(spec: &NetworkSpec) -> Self {
        AdamState {
            first_moment: ParamGradient::zeros(spec),
            second_moment: ParamGradient::zeros(spec),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update; returns the parameter delta.
pub fn adam_step(state: &mut AdamState, grad: &ParamGradient, lr: f64, cfg: &AdamConfig) -> ParamGradient {
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut delta = grad.clone();
    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    for ((d, (m, v)), &g) in delta.iter_mut().zip(moments).zip(grad.iter()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *d = -lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    delta
}
