//! Factorized PPO: per-agent probability ratios, the clipped surrogate
//! (treated as an objective to maximize), and the squared-error value loss
//! against per-agent targets.

use crate::dynamics::AgentAction;
use crate::policy::{log_prob, policy_forward, value_forward, ParameterSet, PolicyError};
use crate::tape::{Real, Tape};

/// Tape sub-chunk size: bounds peak memory while amortizing parameter
/// registration.
const TAPE_CHUNK: usize = 64;

/// One `(scenario, agent, tick)` decision point.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub action: AgentAction,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

/// Flat batch of decision points with factorized advantages and targets.
#[derive(Debug, Clone, Default)]
pub struct AdvantageBatch {
    pub samples: Vec<Sample>,
}

impl AdvantageBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Normalize advantages to zero mean, unit standard deviation. Skipped
    /// (with a log line) when the batch has no variance; returns whether
    /// normalization was applied.
    pub fn normalize_advantages(&mut self) -> bool {
        let n = self.samples.len();
        if n <= 1 {
            return false;
        }
        let mean = self.samples.iter().map(|s| s.advantage).sum::<f64>() / n as f64;
        let var = self
            .samples
            .iter()
            .map(|s| (s.advantage - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if std < 1e-12 {
            log::warn!("advantage batch has zero variance; normalization skipped");
            return false;
        }
        for s in &mut self.samples {
            s.advantage = (s.advantage - mean) / std;
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct PpoOutput {
    /// Mean clipped surrogate over the batch (maximize).
    pub policy_objective: f64,
    /// Mean squared error of the value head (minimize).
    pub value_loss: f64,
    /// Gradient of `-policy_objective` w.r.t. the policy parameters.
    pub policy_grad: Vec<f64>,
    /// Gradient of `value_loss` w.r.t. the value parameters.
    pub value_grad: Vec<f64>,
}

/// Evaluate the clipped-surrogate objective and value loss on a batch and
/// return both descent gradients. Ratios are `exp(new - old)` per agent;
/// the per-sample surrogate is `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn ppo_losses(
    batch: &[Sample],
    policy: &ParameterSet,
    value: &ParameterSet,
    clip_eps: f64,
) -> Result<PpoOutput, PolicyError> {
    assert!(!batch.is_empty(), "empty PPO batch");
    let n = batch.len() as f64;
    let mut policy_grad = vec![0.0; policy.values.len()];
    let mut value_grad = vec![0.0; value.values.len()];
    let mut objective = 0.0;
    let mut value_loss = 0.0;

    for chunk in batch.chunks(TAPE_CHUNK) {
        // Policy side: accumulate -mean(surrogate) on one tape.
        let tape = Tape::with_capacity(policy.values.len() + chunk.len() * 16_000);
        let pv = tape.vars(&policy.values);
        let mut neg_mean_surr = tape.var(0.0);
        for s in chunk {
            let fv: Vec<_> = s.features.iter().map(|&f| tape.var(f)).collect();
            let dist = policy_forward(policy, &pv, &fv)?;
            let new_lp = log_prob(&dist, [tape.var(s.action.accel), tape.var(s.action.steer)]);
            let ratio = (new_lp - tape.var(s.old_log_prob)).exp();
            let adv = tape.var(s.advantage);
            let clipped = ratio.clamp_c(1.0 - clip_eps, 1.0 + clip_eps);
            let surr = Real::min(ratio * adv, clipped * adv);
            objective += surr.value() / n;
            neg_mean_surr = neg_mean_surr - surr * tape.var(1.0 / n);
        }
        let adj = tape.backward(neg_mean_surr);
        for (g, p) in policy_grad.iter_mut().zip(&pv) {
            *g += adj.wrt(*p);
        }

        // Value side on its own tape.
        let vtape = Tape::with_capacity(value.values.len() + chunk.len() * 16_000);
        let vv = vtape.vars(&value.values);
        let mut mean_sq = vtape.var(0.0);
        for s in chunk {
            let fv: Vec<_> = s.features.iter().map(|&f| vtape.var(f)).collect();
            let est = value_forward(value, &vv, &fv)?;
            let err = est - vtape.var(s.value_target);
            value_loss += err.value() * err.value() / n;
            mean_sq = mean_sq + err * err * vtape.var(1.0 / n);
        }
        let vadj = vtape.backward(mean_sq);
        for (g, p) in value_grad.iter_mut().zip(&vv) {
            *g += vadj.wrt(*p);
        }
    }

    Ok(PpoOutput {
        policy_objective: objective,
        value_loss,
        policy_grad,
        value_grad,
    })
}

/// Per-sample clipped surrogate on plain floats; the reference the tests
/// compare scene-level and factorized objectives with.
pub fn surrogate_term(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn surrogate_hand_cases() {
        // ratio 1, A=-1: unclipped -1.
        assert_eq!(surrogate_term(1.0, -1.0, 0.2), -1.0);
        // ratio 1.5, A=+1, eps=0.2: min(1.5, 1.2) = 1.2.
        assert!((surrogate_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        // ratio 0.5, A=-1, eps=0.2: min(-0.5, -0.8) = -0.8.
        assert!((surrogate_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalization_and_zero_variance_skip() {
        let sample = |a: f64| Sample {
            features: vec![0.0],
            action: AgentAction::ZERO,
            old_log_prob: 0.0,
            advantage: a,
            value_target: 0.0,
        };
        let mut batch = AdvantageBatch {
            samples: vec![sample(1.0), sample(3.0)],
        };
        assert!(batch.normalize_advantages());
        let mean: f64 =
            batch.samples.iter().map(|s| s.advantage).sum::<f64>() / batch.len() as f64;
        assert!(mean.abs() < 1e-12);

        let mut flat = AdvantageBatch {
            samples: vec![sample(2.0), sample(2.0)],
        };
        assert!(!flat.normalize_advantages());
        assert_eq!(flat.samples[0].advantage, 2.0);
    }

    #[test]
    fn ppo_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        let feat_dim = 6;
        let mut policy = ParameterSet::init_policy(feat_dim, vec![8, 6], &mut rng);
        let mut value = ParameterSet::init_value(feat_dim, vec![8, 6], &mut rng);
        // Give the value head nonzero weights so its loss has a gradient.
        let n = value.values.len();
        for w in &mut value.values[n - 9..] {
            *w = 0.2;
        }
        let batch: Vec<Sample> = (0..7)
            .map(|_| Sample {
                features: (0..feat_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: AgentAction {
                    accel: rng.gen_range(-1.0..1.0),
                    steer: rng.gen_range(-0.2..0.2),
                },
                old_log_prob: rng.gen_range(-2.0..0.0),
                advantage: rng.gen_range(-1.0..1.0),
                value_target: rng.gen_range(-1.0..0.0),
            })
            .collect();

        let out = ppo_losses(&batch, &policy, &value, 0.2).unwrap();
        let h = 1e-6;
        for k in (0..policy.values.len()).step_by(7) {
            let orig = policy.values[k];
            policy.values[k] = orig + h;
            let hi = ppo_losses(&batch, &policy, &value, 0.2).unwrap().policy_objective;
            policy.values[k] = orig - h;
            let lo = ppo_losses(&batch, &policy, &value, 0.2).unwrap().policy_objective;
            policy.values[k] = orig;
            let fd = -(hi - lo) / (2.0 * h); // grad of the negated objective
            let ad = out.policy_grad[k];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
            assert!(rel < 1e-5, "policy param {k}: {ad} vs {fd}");
        }
        for k in (0..value.values.len()).step_by(7) {
            let orig = value.values[k];
            value.values[k] = orig + h;
            let hi = ppo_losses(&batch, &policy, &value, 0.2).unwrap().value_loss;
            value.values[k] = orig - h;
            let lo = ppo_losses(&batch, &policy, &value, 0.2).unwrap().value_loss;
            value.values[k] = orig;
            let fd = (hi - lo) / (2.0 * h);
            let ad = out.value_grad[k];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
            assert!(rel < 1e-5, "value param {k}: {ad} vs {fd}");
        }
        // Shapes line up with the parameter sets.
        assert_eq!(out.policy_grad.len(), policy.values.len());
        assert_eq!(out.value_grad.len(), value.values.len());
    }
}
