//! Centralized multi-agent policy: a shared MLP decodes an independent
//! normal action distribution per agent from hand-crafted features. The
//! value network shares the architecture but never the parameters.

pub mod features;
pub mod mlp;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ActionBounds, AgentAction};
use crate::tape::{softplus, Real};
pub use features::{extract_features, AgentSnapshot, FeatureConfig};
pub use mlp::{mlp_forward, MlpShape};

/// Additive floor on sigma; keeps PPO ratios finite.
pub const SIGMA_FLOOR: f64 = 1e-4;

pub const ACTION_DIM: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("feature dimension {got} does not match network input {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Flat parameter vector plus gradient buffer for one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSet {
    pub shape: MlpShape,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub step: u64,
}

impl ParameterSet {
    pub fn zeros(shape: MlpShape) -> Self {
        let n = shape.param_count();
        ParameterSet {
            shape,
            values: vec![0.0; n],
            grad: vec![0.0; n],
            step: 0,
        }
    }

    /// Policy network: outputs `(mu_accel, mu_steer, raw_sigma_accel,
    /// raw_sigma_steer)`. Hidden layers get a uniform Xavier init; the
    /// output head starts at zero with sigma biases preset to sane
    /// exploration scales (0.5 m/s^2, 0.05 rad).
    pub fn init_policy<R: Rng>(feature_dim: usize, hidden: Vec<usize>, rng: &mut R) -> Self {
        let shape = MlpShape::new(feature_dim, hidden, 2 * ACTION_DIM);
        let mut p = Self::zeros(shape);
        init_hidden_xavier(&mut p, rng);
        let n = p.values.len();
        p.values[n - 2] = inverse_softplus(0.5 - SIGMA_FLOOR);
        p.values[n - 1] = inverse_softplus(0.05 - SIGMA_FLOOR);
        p
    }

    /// Value network: a single scalar head, zero-initialized.
    pub fn init_value<R: Rng>(feature_dim: usize, hidden: Vec<usize>, rng: &mut R) -> Self {
        let shape = MlpShape::new(feature_dim, hidden, 1);
        let mut p = Self::zeros(shape);
        init_hidden_xavier(&mut p, rng);
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn check_input(&self, dim: usize) -> Result<(), PolicyError> {
        if dim != self.shape.input {
            return Err(PolicyError::DimensionMismatch {
                got: dim,
                expected: self.shape.input,
            });
        }
        Ok(())
    }
}

fn init_hidden_xavier<R: Rng>(p: &mut ParameterSet, rng: &mut R) {
    let mut offset = 0;
    let mut prev = p.shape.input;
    let n_layers = p.shape.hidden.len() + 1;
    for (li, &width) in p
        .shape
        .hidden
        .iter()
        .chain(std::iter::once(&p.shape.output))
        .enumerate()
    {
        if li + 1 < n_layers {
            let bound = (6.0 / (prev + width) as f64).sqrt();
            for w in &mut p.values[offset..offset + prev * width] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        offset += prev * width + width;
        prev = width;
    }
}

fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Diagonal normal over `(accel, steer)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution<R: Real = f64> {
    pub mu: [R; 2],
    pub sigma: [R; 2],
}

/// How an action is drawn from the distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Mean,
    Reparameterized,
}

/// Forward pass of the policy head. Registers on the caller's tape when
/// `R` is a tape variable, so gradients of any downstream scalar flow back
/// to the parameters.
pub fn policy_forward<R: Real>(
    params: &ParameterSet,
    param_values: &[R],
    features: &[R],
) -> Result<ActionDistribution<R>, PolicyError> {
    params.check_input(features.len())?;
    debug_assert_eq!(params.shape.output, 2 * ACTION_DIM);
    let out = mlp_forward(&params.shape, param_values, features);
    let floor = out[0].lit(SIGMA_FLOOR);
    Ok(ActionDistribution {
        mu: [out[0], out[1]],
        sigma: [softplus(out[2]) + floor, softplus(out[3]) + floor],
    })
}

/// Plain-float policy evaluation.
pub fn policy_forward_f64(
    params: &ParameterSet,
    features: &[f64],
) -> Result<ActionDistribution<f64>, PolicyError> {
    policy_forward(params, &params.values, features)
}

/// Forward pass of the value head: one scalar estimate per agent.
pub fn value_forward<R: Real>(
    params: &ParameterSet,
    param_values: &[R],
    features: &[R],
) -> Result<R, PolicyError> {
    params.check_input(features.len())?;
    debug_assert_eq!(params.shape.output, 1);
    Ok(mlp_forward(&params.shape, param_values, features)[0])
}

pub fn value_forward_f64(params: &ParameterSet, features: &[f64]) -> Result<f64, PolicyError> {
    value_forward(params, &params.values, features)
}

/// Draw an action and clip it to bounds. Returns the clipped action and
/// whether clipping fired.
pub fn sample_action<R: Rng>(
    dist: &ActionDistribution<f64>,
    rng: &mut R,
    mode: SampleMode,
    bounds: &ActionBounds,
) -> (AgentAction, bool) {
    let raw = match mode {
        SampleMode::Mean => dist.mu,
        SampleMode::Reparameterized => {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            [dist.mu[0] + dist.sigma[0] * z0, dist.mu[1] + dist.sigma[1] * z1]
        }
    };
    bounds.clip(AgentAction {
        accel: raw[0],
        steer: raw[1],
    })
}

/// Generic mean / reparameterized action with bound clipping; the clip
/// records a zero partial outside the bounds. `z` must be `None` for mean
/// mode and the pre-drawn standard-normal pair otherwise.
pub fn action_from_dist<R: Real>(
    dist: &ActionDistribution<R>,
    z: Option<[f64; 2]>,
    bounds: &ActionBounds,
) -> [R; 2] {
    let raw = match z {
        None => dist.mu,
        Some(z) => [
            dist.mu[0] + dist.sigma[0] * dist.mu[0].lit(z[0]),
            dist.mu[1] + dist.sigma[1] * dist.mu[1].lit(z[1]),
        ],
    };
    [
        raw[0].clamp_c(-bounds.max_accel, bounds.max_accel),
        raw[1].clamp_c(-bounds.max_steer, bounds.max_steer),
    ]
}

/// Sum over both action dimensions of the diagonal-normal log density.
pub fn log_prob<R: Real>(dist: &ActionDistribution<R>, action: [R; 2]) -> R {
    let half_ln_tau = 0.5 * (std::f64::consts::TAU).ln();
    let mut total = dist.mu[0].lit(0.0);
    for d in 0..2 {
        let z = (action[d] - dist.mu[d]) / dist.sigma[d];
        total = total - z * z * dist.mu[0].lit(0.5) - dist.sigma[d].ln() - dist.mu[0].lit(half_ln_tau);
    }
    total
}

pub fn log_prob_f64(dist: &ActionDistribution<f64>, action: &AgentAction) -> f64 {
    log_prob(dist, [action.accel, action.steer])
}
