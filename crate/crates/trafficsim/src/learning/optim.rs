//! AdamW with decoupled weight decay and global-norm gradient clipping.

use crate::policy::ParameterSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

/// Clip the gradient to `grad_clip_norm` (global L2 norm), then apply one
/// AdamW update. A non-finite gradient skips the step and logs the event.
pub fn optimizer_step(
    params: &mut ParameterSet,
    gradient: &[f64],
    lr: f64,
    weight_decay: f64,
    grad_clip_norm: f64,
    state: &mut AdamState,
) -> StepOutcome {
    assert_eq!(gradient.len(), params.values.len(), "gradient shape");
    assert_eq!(state.m.len(), params.values.len(), "optimizer state shape");

    let norm2: f64 = gradient.iter().map(|g| g * g).sum();
    if !norm2.is_finite() {
        log::warn!("skipping optimizer step: non-finite gradient");
        return StepOutcome::SkippedNonFinite;
    }
    let norm = norm2.sqrt();
    let scale = if norm > grad_clip_norm && norm > 0.0 {
        grad_clip_norm / norm
    } else {
        1.0
    };

    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for i in 0..params.values.len() {
        let g = gradient[i] * scale;
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.values[i] -= lr * m_hat / (v_hat.sqrt() + EPS) + lr * weight_decay * params.values[i];
    }
    params.step += 1;
    StepOutcome::Applied
}
