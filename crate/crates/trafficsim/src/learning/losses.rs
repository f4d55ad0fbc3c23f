//! Imitation objectives: the closed-loop reconstruction loss, differentiated
//! by backpropagation through time across the policy, feature extraction,
//! and bicycle dynamics; and single-step behavior cloning on expert states.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::AgentKinematicState;
use crate::policy::{
    action_from_dist, extract_features, log_prob, policy_forward, AgentSnapshot, ParameterSet,
    SampleMode,
};
use crate::scenario::ScenarioSpec;
use crate::simulator::SimConfig;
use crate::tape::{Real, Tape, Var};

use super::TrainError;

/// Huber penalty of the position error norm: quadratic inside `delta`,
/// linear outside, smooth at zero (no square root on the quadratic branch).
pub fn huber_norm<R: Real>(dx: R, dy: R, delta: f64) -> R {
    let r2 = dx * dx + dy * dy;
    if r2.value().sqrt() <= delta {
        r2 * dx.lit(0.5)
    } else {
        let r = r2.sqrt();
        (r - dx.lit(0.5 * delta)) * dx.lit(delta)
    }
}

#[derive(Debug, Clone)]
pub struct IlLossOutput {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// Learner agents that collided / left the road during the unroll.
    pub collisions: usize,
    pub offroad: usize,
    pub agents: usize,
}

/// Closed-loop imitation loss: unroll the policy from the expert's initial
/// state for `rollout_t` ticks (mean action unless configured otherwise)
/// and sum the Huber position error against the expert at every tick,
/// over all agents. The returned gradient is exact BPTT through dynamics,
/// features, and the policy.
pub fn il_loss(
    spec: &ScenarioSpec,
    policy: &ParameterSet,
    rollout_t: usize,
    huber_delta: f64,
    action_mode: SampleMode,
    sim: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<IlLossOutput, TrainError> {
    let expert = spec.expert.as_ref().ok_or(TrainError::NotNominal)?;
    if rollout_t > expert.ticks() {
        return Err(TrainError::RolloutExceedsExpert {
            rollout_t,
            expert_t: expert.ticks(),
        });
    }
    let n = spec.agent_count();
    let h = sim.features.history_len;
    debug_assert!(spec.hero_indices().is_empty(), "nominal specs have no heroes");

    let est_nodes = policy.values.len() + rollout_t * n * (policy.values.len() + 2_000);
    let tape = Tape::with_capacity(est_nodes.min(80_000_000));
    let pvars = tape.vars(&policy.values);

    let mut snapshots: Vec<AgentSnapshot<Var<'_>>> = spec
        .agents
        .iter()
        .map(|a| {
            let mut hist = a.history.clone();
            while hist.len() < h {
                hist.insert(0, hist[0]);
            }
            while hist.len() > h {
                hist.remove(0);
            }
            AgentSnapshot {
                history: hist
                    .iter()
                    .map(|s| [tape.var(s.x), tape.var(s.y), tape.var(s.theta), tape.var(s.v)])
                    .collect(),
                hero: a.hero,
                alive: true,
            }
        })
        .collect();
    let wheelbases: Vec<f64> = spec
        .agents
        .iter()
        .map(|a| a.history.last().unwrap().wheelbase)
        .collect();

    let mut loss = tape.var(0.0);
    let mut value_states: Vec<Vec<AgentKinematicState>> = Vec::with_capacity(rollout_t);
    for t in 0..rollout_t {
        let mut next_states = Vec::with_capacity(n);
        for i in 0..n {
            let feats = extract_features(&snapshots, &spec.map, i, &sim.features);
            let dist = policy_forward(policy, &pvars, &feats)?;
            let z = match action_mode {
                SampleMode::Mean => None,
                SampleMode::Reparameterized => Some([
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                ]),
            };
            let a = action_from_dist(&dist, z, &sim.bounds);
            let [x, y, th, v] = snapshots[i].current();
            next_states.push(crate::dynamics::bicycle_kinematics(
                x,
                y,
                th,
                v,
                a[0],
                a[1],
                wheelbases[i],
                sim.dt,
            ));
        }
        let mut tick_states = Vec::with_capacity(n);
        for i in 0..n {
            snapshots[i].history.remove(0);
            snapshots[i].history.push(next_states[i]);
            let ex = &expert.states[t + 1][i];
            let dx = next_states[i][0] - tape.var(ex.x);
            let dy = next_states[i][1] - tape.var(ex.y);
            loss = loss + huber_norm(dx, dy, huber_delta);
            tick_states.push(AgentKinematicState {
                x: next_states[i][0].value(),
                y: next_states[i][1].value(),
                theta: next_states[i][2].value(),
                v: next_states[i][3].value(),
                ..*spec.agents[i].history.last().unwrap()
            });
        }
        if !loss.value().is_finite() {
            return Err(TrainError::NonFiniteLoss { tick: t });
        }
        value_states.push(tick_states);
    }

    let adjoints = tape.backward(loss);
    let gradient: Vec<f64> = pvars.iter().map(|&p| adjoints.wrt(p)).collect();

    // Infraction diagnostics on the unrolled values.
    let mut collided = vec![false; n];
    let mut offroad_hit = vec![false; n];
    for row in &value_states {
        let boxes: Vec<_> = row.iter().map(|s| s.bounding_box()).collect();
        for i in 0..n {
            if crate::geometry::offroad_check(&boxes[i], &spec.map.road_polygon) {
                offroad_hit[i] = true;
            }
            for j in i + 1..n {
                if crate::geometry::obb_overlap(&boxes[i], &boxes[j]) {
                    collided[i] = true;
                    collided[j] = true;
                }
            }
        }
    }

    Ok(IlLossOutput {
        loss: loss.value(),
        gradient,
        collisions: collided.iter().filter(|&&c| c).count(),
        offroad: offroad_hit.iter().filter(|&&c| c).count(),
        agents: n,
    })
}

/// Open-loop behavior cloning: mean negative log-likelihood of the
/// recorded expert actions under the policy at the recorded expert states.
pub fn bc_loss(
    spec: &ScenarioSpec,
    policy: &ParameterSet,
    sim: &SimConfig,
) -> Result<(f64, Vec<f64>), TrainError> {
    let expert = spec.expert.as_ref().ok_or(TrainError::NotNominal)?;
    let n = spec.agent_count();
    let h = sim.features.history_len;
    let ticks = expert.ticks();

    // Full per-agent state sequences: pre-rollout history followed by the
    // expert log (whose first state equals the history's last entry).
    let seqs: Vec<Vec<AgentKinematicState>> = (0..n)
        .map(|i| {
            let mut seq = spec.agents[i].history.clone();
            seq.pop();
            seq.extend(expert.states.iter().map(|row| row[i]));
            seq
        })
        .collect();
    let pre = seqs[0].len() - expert.states.len();

    let mut total = 0.0;
    let mut gradient = vec![0.0; policy.values.len()];
    let samples = (ticks * n) as f64;
    for t0 in (0..ticks).step_by(8) {
        let t1 = (t0 + 8).min(ticks);
        let tape = Tape::with_capacity(policy.values.len() + (t1 - t0) * n * 16_000);
        let pvars = tape.vars(&policy.values);
        let mut chunk_loss = tape.var(0.0);
        for t in t0..t1 {
            let snapshots: Vec<AgentSnapshot<f64>> = (0..n)
                .map(|i| {
                    let end = pre + t + 1;
                    let start = end.saturating_sub(h);
                    let mut hist: Vec<[f64; 4]> = seqs[i][start..end]
                        .iter()
                        .map(|s| [s.x, s.y, s.theta, s.v])
                        .collect();
                    while hist.len() < h {
                        hist.insert(0, hist[0]);
                    }
                    AgentSnapshot {
                        history: hist,
                        hero: false,
                        alive: true,
                    }
                })
                .collect();
            for i in 0..n {
                let feats = extract_features(&snapshots, &spec.map, i, &sim.features);
                let fv: Vec<_> = feats.iter().map(|&f| tape.var(f)).collect();
                let dist = policy_forward(policy, &pvars, &fv)?;
                let a = expert.actions[t][i];
                let lp = log_prob(&dist, [tape.var(a.accel), tape.var(a.steer)]);
                chunk_loss = chunk_loss - lp * tape.var(1.0 / samples);
            }
        }
        total += chunk_loss.value();
        let adj = tape.backward(chunk_loss);
        for (g, p) in gradient.iter_mut().zip(&pvars) {
            *g += adj.wrt(*p);
        }
    }
    Ok((total, gradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::optim::{optimizer_step, AdamState};
    use crate::policy::MlpShape;
    use crate::scenario::generate::place_nominal;
    use crate::seeds::stream_rng;
    use crate::simulator::{rollout, ControlSource, RolloutOptions};

    fn small_sim() -> SimConfig {
        let mut sim = SimConfig::default();
        sim.features.history_len = 4;
        sim.features.neighbor_k = 2;
        sim
    }

    /// Nominal spec with an oracle expert log attached.
    fn nominal_with_log(seed: u64, agents: usize, ticks: usize, sim: &SimConfig) -> ScenarioSpec {
        let mut spec = place_nominal(0, agents, seed, sim.dt).unwrap();
        // Trim generated histories to the configured horizon.
        for a in &mut spec.agents {
            while a.history.len() > sim.features.history_len {
                a.history.remove(0);
            }
        }
        let mut rng = stream_rng(seed, "expert", 0);
        let traj = rollout(
            &spec,
            &ControlSource::Oracle,
            &RolloutOptions::il(ticks),
            sim,
            &mut rng,
        )
        .unwrap();
        spec.expert = Some(crate::scenario::ExpertTrajectory {
            dt: sim.dt,
            states: traj.states.clone(),
            actions: traj.actions.clone(),
        });
        spec
    }

    #[test]
    fn huber_branch_values() {
        // |e| = 1, delta = 1: quadratic branch gives 0.5.
        assert!((huber_norm(1.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        // |e| = 5, delta = 1: linear branch gives 4.5.
        assert!((huber_norm(3.0, 4.0, 1.0) - 4.5).abs() < 1e-15);
    }

    #[test]
    fn constant_offset_loss_hand_value() {
        // Expert log = the zero policy's own rollout shifted 1 m laterally:
        // every tick contributes Huber(1) = 0.5 per agent, so the loss over
        // 10 ticks and 2 agents is exactly 10.0.
        let sim = small_sim();
        let mut spec = place_nominal(0, 2, 3, sim.dt).unwrap();
        for a in &mut spec.agents {
            while a.history.len() > sim.features.history_len {
                a.history.remove(0);
            }
        }
        let policy = ParameterSet::zeros(MlpShape::new(sim.features.dim(), vec![6], 4));
        let mut rng = stream_rng(0, "il", 0);
        let traj = rollout(
            &spec,
            &ControlSource::Policy {
                params: &policy,
                mode: SampleMode::Mean,
            },
            &RolloutOptions::il(10),
            &sim,
            &mut rng,
        )
        .unwrap();
        let mut states = traj.states.clone();
        for row in &mut states {
            for s in row.iter_mut() {
                s.y += 1.0;
            }
        }
        spec.expert = Some(crate::scenario::ExpertTrajectory {
            dt: sim.dt,
            states,
            actions: traj.actions.clone(),
        });
        let out = il_loss(&spec, &policy, 10, 1.0, SampleMode::Mean, &sim, &mut rng).unwrap();
        assert!((out.loss - 10.0).abs() < 1e-9, "loss {}", out.loss);
        assert_eq!(out.gradient.len(), policy.values.len());
        assert_eq!(out.agents, 2);
    }

    #[test]
    fn zero_residual_gives_zero_loss_and_gradient() {
        // Expert generated by the zero policy itself: unrolling the same
        // policy reproduces the log exactly.
        let sim = small_sim();
        let mut spec = place_nominal(0, 2, 5, sim.dt).unwrap();
        for a in &mut spec.agents {
            while a.history.len() > sim.features.history_len {
                a.history.remove(0);
            }
        }
        let policy = ParameterSet::zeros(MlpShape::new(sim.features.dim(), vec![6], 4));
        let mut rng = stream_rng(1, "zero", 0);
        let traj = rollout(
            &spec,
            &ControlSource::Policy {
                params: &policy,
                mode: SampleMode::Mean,
            },
            &RolloutOptions::il(8),
            &sim,
            &mut rng,
        )
        .unwrap();
        spec.expert = Some(crate::scenario::ExpertTrajectory {
            dt: sim.dt,
            states: traj.states.clone(),
            actions: traj.actions.clone(),
        });
        let out = il_loss(&spec, &policy, 8, 1.0, SampleMode::Mean, &sim, &mut rng).unwrap();
        assert!(out.loss.abs() < 1e-18, "loss {}", out.loss);
        assert!(out.gradient.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn rollout_longer_than_expert_rejected() {
        let sim = small_sim();
        let spec = nominal_with_log(5, 2, 6, &sim);
        let policy = ParameterSet::zeros(MlpShape::new(sim.features.dim(), vec![6], 4));
        let mut rng = stream_rng(2, "il", 0);
        assert!(matches!(
            il_loss(&spec, &policy, 7, 1.0, SampleMode::Mean, &sim, &mut rng),
            Err(TrainError::RolloutExceedsExpert { .. })
        ));
    }

    #[test]
    fn il_bptt_gradient_matches_finite_differences() {
        let sim = small_sim();
        let spec = nominal_with_log(7, 3, 10, &sim);
        let mut rng = stream_rng(11, "init", 0);
        let mut policy = {
            let mut r = stream_rng(4, "p", 0);
            ParameterSet::init_policy(sim.features.dim(), vec![8, 8], &mut r)
        };
        let out = il_loss(&spec, &policy, 10, 1.0, SampleMode::Mean, &sim, &mut rng).unwrap();
        let h = 1e-6;
        let max_abs = out
            .gradient
            .iter()
            .fold(0.0f64, |m, g| m.max(g.abs()))
            .max(1e-12);
        for k in (0..policy.values.len()).step_by(11) {
            let orig = policy.values[k];
            policy.values[k] = orig + h;
            let hi = il_loss(&spec, &policy, 10, 1.0, SampleMode::Mean, &sim, &mut rng)
                .unwrap()
                .loss;
            policy.values[k] = orig - h;
            let lo = il_loss(&spec, &policy, 10, 1.0, SampleMode::Mean, &sim, &mut rng)
                .unwrap()
                .loss;
            policy.values[k] = orig;
            let fd = (hi - lo) / (2.0 * h);
            let ad = out.gradient[k];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-4 * max_abs).max(1e-12);
            assert!(rel < 1e-4, "param {k}: ad {ad} vs fd {fd}");
        }
    }

    #[test]
    fn bc_loss_decreases_when_overfitting_tiny_batch() {
        let sim = small_sim();
        let spec = nominal_with_log(9, 2, 6, &sim);
        let mut rng = stream_rng(21, "bc", 0);
        let mut policy = ParameterSet::init_policy(sim.features.dim(), vec![8, 8], &mut rng);
        let mut opt = AdamState::new(policy.values.len());
        let (first, _) = bc_loss(&spec, &policy, &sim).unwrap();
        let mut last = first;
        for _ in 0..50 {
            let (loss, grad) = bc_loss(&spec, &policy, &sim).unwrap();
            optimizer_step(&mut policy, &grad, 3e-3, 0.0, 1.0, &mut opt);
            last = loss;
        }
        assert!(
            last < first,
            "BC loss should fall on a fixed tiny batch: {first} -> {last}"
        );
    }

    #[test]
    fn bc_gradient_matches_finite_differences() {
        let sim = small_sim();
        let spec = nominal_with_log(13, 2, 5, &sim);
        let mut policy = {
            let mut r = stream_rng(6, "p", 0);
            ParameterSet::init_policy(sim.features.dim(), vec![6, 6], &mut r)
        };
        let (_, grad) = bc_loss(&spec, &policy, &sim).unwrap();
        let h = 1e-6;
        for k in (0..policy.values.len()).step_by(13) {
            let orig = policy.values[k];
            policy.values[k] = orig + h;
            let (hi, _) = bc_loss(&spec, &policy, &sim).unwrap();
            policy.values[k] = orig - h;
            let (lo, _) = bc_loss(&spec, &policy, &sim).unwrap();
            policy.values[k] = orig;
            let fd = (hi - lo) / (2.0 * h);
            let ad = grad[k];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
            assert!(rel < 1e-4, "param {k}: {ad} vs {fd}");
        }
    }
}
