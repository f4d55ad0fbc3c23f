//! The combined update loop: collect a batch of mixed-origin rollouts,
//! build factorized advantages, and take combined AdamW steps where the
//! weighted RL gradient and the imitation gradient are summed per update.

use rayon::prelude::*;

use crate::policy::{value_forward_f64, ParameterSet, SampleMode};
use crate::scenario::{sample_initial_state, ScenarioSpec};
use crate::seeds::{stream_rng, substream};
use crate::simulator::{rollout, ControlSource, RolloutOptions, SimConfig, Trajectory};

use super::gae::{compute_gae, compute_value_targets};
use super::losses::{bc_loss, il_loss};
use super::optim::{optimizer_step, AdamState};
use super::ppo::{ppo_losses, AdvantageBatch, Sample};
use super::{TrainConfig, TrainError, TrainMode};

/// Everything mutable across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub policy: ParameterSet,
    pub value: ParameterSet,
    pub opt_policy: AdamState,
    pub opt_value: AdamState,
}

impl TrainState {
    /// Seeded initialization; policy and value nets never share parameters.
    pub fn init(cfg: &TrainConfig) -> TrainState {
        let feature_dim = cfg.sim_config().features.dim();
        let mut rng_p = stream_rng(cfg.seed, "init-policy", 0);
        let mut rng_v = stream_rng(cfg.seed, "init-value", 0);
        let policy = ParameterSet::init_policy(feature_dim, cfg.hidden.clone(), &mut rng_p);
        let value = ParameterSet::init_value(feature_dim, cfg.hidden.clone(), &mut rng_v);
        let np = policy.values.len();
        let nv = value.values.len();
        TrainState {
            policy,
            value,
            opt_policy: AdamState::new(np),
            opt_value: AdamState::new(nv),
        }
    }
}

/// One row of the epoch report.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub mode: TrainMode,
    pub il_loss: Option<f64>,
    pub bc_loss: Option<f64>,
    pub surrogate: Option<f64>,
    pub value_loss: Option<f64>,
    pub mean_return: Option<f64>,
    pub collision_pct: Option<f64>,
    pub offroad_pct: Option<f64>,
    pub wall_s: f64,
}

impl EpochReport {
    pub fn header() -> &'static str {
        "epoch\tmode\til_loss\tsurrogate\tvalue_loss\tmean_return\tcollision_pct\toffroad_pct\twall_s"
    }

    pub fn row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::from("-"), |x| format!("{x:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.2}",
            self.epoch,
            self.mode.label(),
            opt(self.il_loss.or(self.bc_loss)),
            opt(self.surrogate),
            opt(self.value_loss),
            opt(self.mean_return),
            opt(self.collision_pct),
            opt(self.offroad_pct),
            self.wall_s
        )
    }
}

fn validate_sets(
    cfg: &TrainConfig,
    nominal: &[ScenarioSpec],
    longtail: &[ScenarioSpec],
) -> Result<(), TrainError> {
    let mode = cfg.mode;
    if (mode.uses_il() || mode.uses_bc()) && nominal.is_empty() {
        return Err(TrainError::ModeDataInconsistent(format!(
            "mode {} needs nominal scenarios with expert logs",
            mode.label()
        )));
    }
    if mode.uses_il() || mode.uses_bc() {
        if let Some(bad) = nominal.iter().find(|s| s.expert.is_none()) {
            return Err(TrainError::ModeDataInconsistent(format!(
                "nominal scenario {} has no expert log",
                bad.id
            )));
        }
    }
    if mode.uses_rl() {
        let alpha = cfg.alpha;
        if alpha > 0.0 && longtail.is_empty() {
            return Err(TrainError::ModeDataInconsistent(
                "alpha > 0 requires a long-tail set".into(),
            ));
        }
        if alpha < 1.0 && nominal.is_empty() {
            return Err(TrainError::ModeDataInconsistent(
                "alpha < 1 requires a nominal set".into(),
            ));
        }
    }
    Ok(())
}

/// Per-agent samples of one trajectory, using the value net for GAE and
/// the from-start discounted return as the factorized value target.
fn batch_from_trajectory(
    traj: &Trajectory,
    value: &ParameterSet,
    gamma: f64,
    gae_lambda: f64,
) -> Result<Vec<Sample>, TrainError> {
    let t_len = traj.ticks();
    if t_len == 0 {
        return Ok(Vec::new());
    }
    let feats = traj
        .features
        .as_ref()
        .expect("training rollouts record features");
    let targets = compute_value_targets(&traj.rewards, gamma);
    let mut samples = Vec::new();
    for i in 0..traj.agent_count() {
        if traj.hero[i] {
            continue;
        }
        let mut values = Vec::with_capacity(t_len + 1);
        for t in 0..t_len {
            values.push(value_forward_f64(value, &feats[t][i])?);
        }
        let terminal = traj.termination_tick.is_some();
        values.push(if terminal {
            0.0
        } else {
            value_forward_f64(value, &feats[t_len][i])?
        });
        let rewards: Vec<f64> = traj.rewards.iter().map(|r| r[i]).collect();
        let adv = compute_gae(&rewards, &values, gamma, gae_lambda);
        for t in 0..t_len {
            samples.push(Sample {
                features: feats[t][i].clone(),
                action: traj.actions[t][i],
                old_log_prob: traj.log_probs[t][i],
                advantage: adv[t],
                value_target: targets[i],
            });
        }
    }
    Ok(samples)
}

fn shuffled_chunks(n: usize, chunk: usize, seed: u64, label: &str, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, label, epoch as u64);
    // Fisher-Yates with the deterministic stream.
    for i in (1..idx.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        idx.swap(i, j);
    }
    idx.chunks(chunk.max(1)).map(|c| c.to_vec()).collect()
}

/// One training epoch: sample `ppo_batch` scenarios from the alpha
/// mixture, roll them out under the policy mixture, then take combined
/// updates (`lambda * RL gradient + imitation gradient`) over minibatch
/// chunks. Bit-reproducible for a fixed seed.
pub fn train_epoch(
    cfg: &TrainConfig,
    sim: &SimConfig,
    nominal: &[ScenarioSpec],
    longtail: &[ScenarioSpec],
    state: &mut TrainState,
    epoch: usize,
) -> Result<EpochReport, TrainError> {
    cfg.validate()?;
    validate_sets(cfg, nominal, longtail)?;
    let start = std::time::Instant::now();
    let mode = cfg.mode;
    let lr = cfg.lr_at_epoch(epoch);
    let k_total = cfg.ppo_batch;

    // Scenario draws for this epoch.
    let alpha_eff = if mode.uses_rl() { cfg.alpha } else { 0.0 };
    let mut mix_rng = stream_rng(cfg.seed, "epoch-mix", epoch as u64);
    let mut draws: Vec<&ScenarioSpec> = Vec::with_capacity(k_total);
    for _ in 0..k_total {
        let (spec, _nominal_draw) = sample_initial_state(alpha_eff, nominal, longtail, &mut mix_rng)?;
        draws.push(spec);
    }

    // RL side: collect sampled rollouts with early termination.
    let mut rl_rollouts: Vec<Trajectory> = Vec::new();
    let mut batch = AdvantageBatch::default();
    let mut rollout_samples: Vec<(usize, usize)> = Vec::new(); // sample range per rollout
    if mode.uses_rl() {
        let opts = RolloutOptions {
            ticks: cfg.rollout_t,
            terminate_on_infraction: true,
            shaped: mode == TrainMode::RlShaped,
            record_features: true,
        };
        let seed = cfg.seed;
        rl_rollouts = draws
            .par_iter()
            .enumerate()
            .map(|(k, spec)| {
                let mut rng =
                    stream_rng(seed, "rollout", (epoch * k_total + k) as u64);
                rollout(
                    spec,
                    &ControlSource::Policy {
                        params: &state.policy,
                        mode: SampleMode::Reparameterized,
                    },
                    &opts,
                    sim,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        for traj in &rl_rollouts {
            let begin = batch.samples.len();
            batch
                .samples
                .extend(batch_from_trajectory(traj, &state.value, cfg.gamma, cfg.gae_lambda)?);
            rollout_samples.push((begin, batch.samples.len()));
        }
        batch.normalize_advantages();
    }

    // Imitation side: nominal-origin scenarios from the same mixture.
    let il_specs: Vec<&ScenarioSpec> = if mode.uses_il() || mode.uses_bc() {
        draws.iter().copied().filter(|s| s.is_nominal()).collect()
    } else {
        Vec::new()
    };

    let rl_chunks = if mode.uses_rl() && !rl_rollouts.is_empty() {
        let mut chunks = Vec::new();
        for pass in 0..cfg.ppo_epochs {
            chunks.extend(shuffled_chunks(
                rl_rollouts.len(),
                cfg.ppo_minibatch,
                cfg.seed,
                "ppo-shuffle",
                epoch * 1000 + pass,
            ));
        }
        chunks
    } else {
        Vec::new()
    };
    let il_chunks = if !il_specs.is_empty() {
        shuffled_chunks(il_specs.len(), cfg.il_minibatch, cfg.seed, "il-shuffle", epoch)
    } else {
        Vec::new()
    };

    let steps = rl_chunks.len().max(il_chunks.len()).max(1);
    let mut sum_surrogate = 0.0;
    let mut sum_value_loss = 0.0;
    let mut n_rl_steps = 0usize;
    let mut sum_il = 0.0;
    let mut n_il = 0usize;
    let mut sum_bc = 0.0;
    let mut n_bc = 0usize;
    let mut il_col = 0usize;
    let mut il_off = 0usize;
    let mut il_agents = 0usize;

    for step in 0..steps {
        let mut grad = vec![0.0; state.policy.values.len()];

        if !rl_chunks.is_empty() {
            let chunk = &rl_chunks[step % rl_chunks.len()];
            let mut samples: Vec<Sample> = Vec::new();
            for &r in chunk {
                let (b, e) = rollout_samples[r];
                samples.extend_from_slice(&batch.samples[b..e]);
            }
            if !samples.is_empty() {
                let out = ppo_losses(&samples, &state.policy, &state.value, cfg.clip_eps)?;
                sum_surrogate += out.policy_objective;
                sum_value_loss += out.value_loss;
                n_rl_steps += 1;
                for (g, d) in grad.iter_mut().zip(&out.policy_grad) {
                    *g += cfg.lambda_rl * d;
                }
                optimizer_step(
                    &mut state.value,
                    &out.value_grad,
                    lr,
                    cfg.weight_decay,
                    cfg.grad_clip_norm,
                    &mut state.opt_value,
                );
            }
        }

        if !il_chunks.is_empty() && mode.uses_il() {
            let chunk = &il_chunks[step % il_chunks.len()];
            let seed = cfg.seed;
            let policy = &state.policy;
            let outs: Vec<_> = chunk
                .par_iter()
                .map(|&s| {
                    let mut rng = stream_rng(
                        seed,
                        "il-repar",
                        substream(epoch as u64, "step", (step * 7919 + s) as u64),
                    );
                    il_loss(
                        il_specs[s],
                        policy,
                        cfg.rollout_t,
                        cfg.huber_delta,
                        cfg.il_action_mode,
                        sim,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let scale = 1.0 / outs.len() as f64;
            for out in &outs {
                sum_il += out.loss;
                n_il += 1;
                il_col += out.collisions;
                il_off += out.offroad;
                il_agents += out.agents;
                for (g, d) in grad.iter_mut().zip(&out.gradient) {
                    *g += scale * d;
                }
            }
        }

        if !il_chunks.is_empty() && mode.uses_bc() {
            let chunk = &il_chunks[step % il_chunks.len()];
            let policy = &state.policy;
            let outs: Vec<_> = chunk
                .par_iter()
                .map(|&s| bc_loss(il_specs[s], policy, sim))
                .collect::<Result<Vec<_>, _>>()?;
            let scale = 1.0 / outs.len() as f64;
            for (loss, g_bc) in &outs {
                sum_bc += loss;
                n_bc += 1;
                for (g, d) in grad.iter_mut().zip(g_bc) {
                    *g += scale * d;
                }
            }
        }

        optimizer_step(
            &mut state.policy,
            &grad,
            lr,
            cfg.weight_decay,
            cfg.grad_clip_norm,
            &mut state.opt_policy,
        );
    }

    // Infraction and return statistics over the learner agents.
    let (mut col, mut off, mut agents, mut ret_sum, mut ret_n) = (0usize, 0usize, 0usize, 0.0, 0usize);
    for traj in &rl_rollouts {
        for i in 0..traj.agent_count() {
            if traj.hero[i] {
                continue;
            }
            agents += 1;
            match traj.first_infraction[i] {
                Some((_, crate::simulator::InfractionKind::Collision)) => col += 1,
                Some((_, crate::simulator::InfractionKind::Offroad)) => off += 1,
                None => {}
            }
            ret_sum += traj.discounted_return(i, cfg.gamma);
            ret_n += 1;
        }
    }
    let pct = |n: usize, d: usize| {
        if d > 0 {
            Some(100.0 * n as f64 / d as f64)
        } else {
            None
        }
    };

    Ok(EpochReport {
        epoch,
        mode,
        il_loss: (n_il > 0).then(|| sum_il / n_il as f64),
        bc_loss: (n_bc > 0).then(|| sum_bc / n_bc as f64),
        surrogate: (n_rl_steps > 0).then(|| sum_surrogate / n_rl_steps as f64),
        value_loss: (n_rl_steps > 0).then(|| sum_value_loss / n_rl_steps as f64),
        mean_return: (ret_n > 0).then(|| ret_sum / ret_n as f64),
        collision_pct: pct(col, agents).or(pct(il_col, il_agents)),
        offroad_pct: pct(off, agents).or(pct(il_off, il_agents)),
        wall_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate::{
        default_logical_scenarios, place_nominal, sample_concrete_scenario,
    };
    use crate::simulator::{rollout, RolloutOptions};

    fn tiny_cfg(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            seed: 5,
            ppo_batch: 6,
            ppo_minibatch: 3,
            il_minibatch: 3,
            rollout_t: 8,
            hidden: vec![16, 16],
            history_len: 4,
            neighbor_k: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn tiny_sets(cfg: &TrainConfig) -> (Vec<ScenarioSpec>, Vec<ScenarioSpec>) {
        let sim = cfg.sim_config();
        let mut nominal = Vec::new();
        for s in 0..3u64 {
            let mut spec = place_nominal(0, 3, s, sim.dt).unwrap();
            for a in &mut spec.agents {
                while a.history.len() > sim.features.history_len {
                    a.history.remove(0);
                }
            }
            let mut rng = stream_rng(s, "expert", 0);
            let traj = rollout(
                &spec,
                &ControlSource::Oracle,
                &RolloutOptions::il(cfg.rollout_t + 2),
                &sim,
                &mut rng,
            )
            .unwrap();
            spec.expert = Some(crate::scenario::ExpertTrajectory {
                dt: sim.dt,
                states: traj.states.clone(),
                actions: traj.actions.clone(),
            });
            nominal.push(spec);
        }
        let logicals = default_logical_scenarios();
        let longtail = (0..3u64)
            .map(|s| sample_concrete_scenario(&logicals[(s % 2) as usize], s + 50, sim.dt).unwrap())
            .collect();
        (nominal, longtail)
    }

    #[test]
    fn epoch_is_bit_reproducible() {
        let cfg = tiny_cfg(TrainMode::Rtr);
        let sim = cfg.sim_config();
        let (nominal, longtail) = tiny_sets(&cfg);
        let mut a = TrainState::init(&cfg);
        let mut b = TrainState::init(&cfg);
        train_epoch(&cfg, &sim, &nominal, &longtail, &mut a, 0).unwrap();
        train_epoch(&cfg, &sim, &nominal, &longtail, &mut b, 0).unwrap();
        assert_eq!(a.policy.values, b.policy.values);
        assert_eq!(a.value.values, b.value.values);
    }

    #[test]
    fn mode_data_inconsistency_rejected_before_rollouts() {
        let cfg = tiny_cfg(TrainMode::Il);
        let sim = cfg.sim_config();
        let mut st = TrainState::init(&cfg);
        let err = train_epoch(&cfg, &sim, &[], &[], &mut st, 0).unwrap_err();
        assert!(matches!(err, TrainError::ModeDataInconsistent(_)));
    }

    #[test]
    fn lambda_zero_alpha_zero_is_pure_il() {
        // With lambda = 0 and alpha = 0, the combined update must equal the
        // IL-only update: run both configurations from the same init.
        let mut cfg = tiny_cfg(TrainMode::Rtr);
        cfg.lambda_rl = 0.0;
        cfg.alpha = 0.0;
        let sim = cfg.sim_config();
        let (nominal, longtail) = tiny_sets(&cfg);
        let mut combined = TrainState::init(&cfg);
        // The value head still trains on RL rollouts, but the policy must
        // move exactly as under pure IL given identical rollout draws.
        train_epoch(&cfg, &sim, &nominal, &longtail, &mut combined, 0).unwrap();

        let mut il_cfg = cfg.clone();
        il_cfg.mode = TrainMode::Il;
        let mut pure = TrainState::init(&il_cfg);
        train_epoch(&il_cfg, &sim, &nominal, &longtail, &mut pure, 0).unwrap();
        assert_eq!(combined.policy.values, pure.policy.values);
    }

    #[test]
    fn bc_mode_trains_without_rollouts() {
        let cfg = tiny_cfg(TrainMode::Bc);
        let sim = cfg.sim_config();
        let (nominal, _) = tiny_sets(&cfg);
        let mut st = TrainState::init(&cfg);
        let before = st.policy.values.clone();
        let report = train_epoch(&cfg, &sim, &nominal, &[], &mut st, 0).unwrap();
        assert!(report.bc_loss.is_some());
        assert!(report.surrogate.is_none());
        assert_ne!(before, st.policy.values);
    }

    #[test]
    fn rl_mode_reports_rollout_stats() {
        let cfg = tiny_cfg(TrainMode::Rl);
        let sim = cfg.sim_config();
        let (nominal, longtail) = tiny_sets(&cfg);
        let mut st = TrainState::init(&cfg);
        let report = train_epoch(&cfg, &sim, &nominal, &longtail, &mut st, 0).unwrap();
        assert!(report.surrogate.is_some());
        assert!(report.value_loss.is_some());
        assert!(report.mean_return.is_some());
        assert!(report.collision_pct.is_some());
        assert!(report.il_loss.is_none());
    }
}
