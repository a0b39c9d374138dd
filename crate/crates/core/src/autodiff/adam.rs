//! Adam with bias correction and a warmup-then-exponential-decay learning
//! rate schedule.

use super::ParamSet;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update. Rejects non-finite gradients before touching any state,
/// reporting the iteration and the owning tensor of the offending entry.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    iter: u64,
) -> Result<()> {
    assert_eq!(grads.len(), params.len());
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            iter,
            detail: format!(
                "non-finite gradient in parameter tensor `{}`",
                params.tensor_name_at(bad)
            ),
        });
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let values = params.values_mut();
    for i in 0..values.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// lr(t) = base · warmup(t) · (decay_factor)^(t / decay_iters).
///
/// Warmup ramps linearly from `1/warmup_iters` to 1 over `warmup_iters`
/// steps; a zero warmup leaves lr(0) at the base rate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_factor: f64,
    pub decay_iters: u64,
    pub warmup_iters: u64,
}

impl LrSchedule {
    pub fn at(&self, t: u64) -> f64 {
        let warm = if self.warmup_iters == 0 {
            1.0
        } else {
            ((t + 1) as f64 / self.warmup_iters as f64).min(1.0)
        };
        let frac = if self.decay_iters == 0 {
            0.0
        } else {
            t as f64 / self.decay_iters as f64
        };
        self.base * warm * self.decay_factor.powf(frac)
    }
}
