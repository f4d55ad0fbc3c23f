//! Closed-loop scene stepping: the policy mixture (scripted heroes, learner
//! or oracle for everyone else), per-agent sparse rewards, infraction
//! detection, early termination, and trajectory recording.

pub mod trajectory;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{bicycle_step, ActionBounds, AgentAction, AgentKinematicState, DynamicsError};
use crate::geometry::{obb_overlap, offroad_check};
use crate::lane_graph::LaneGraph;
use crate::policy::{
    extract_features, log_prob_f64, policy_forward_f64, sample_action, AgentSnapshot,
    FeatureConfig, ParameterSet, PolicyError, SampleMode,
};
use crate::scenario::{hero_action, HeroRuntime, IdmParams, ScenarioSpec};
pub use trajectory::{
    read_trajectory_log, write_trajectory_log, ActionSource, InfractionKind, LogError, Trajectory,
};

/// Shaped-reward scale constant: bonus `0.5 (C - delta) / C` with
/// `delta = |v - v_limit|`, episode termination once `delta >= C`.
pub const SHAPED_C: f64 = 30.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("expected {expected} actions (one per agent), got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("dynamics error: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
}

/// Simulation-wide constants shared by rollouts and dataset generation.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub bounds: ActionBounds,
    pub features: FeatureConfig,
    pub idm: IdmParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: crate::dynamics::DEFAULT_DT,
            bounds: ActionBounds::default(),
            features: FeatureConfig::default(),
            idm: IdmParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneAgent {
    pub state: AgentKinematicState,
    /// Sliding window of the last H states, oldest first, current last.
    pub history: Vec<AgentKinematicState>,
    pub hero: bool,
    pub alive: bool,
}

/// Joint state of all agents plus the map at one tick.
#[derive(Debug, Clone)]
pub struct SceneState {
    pub agents: Vec<SceneAgent>,
    pub map: Arc<LaneGraph>,
    pub tick: usize,
}

/// Per-agent infraction flags for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InfractionFlags {
    pub collision: bool,
    pub offroad: bool,
}

impl InfractionFlags {
    pub fn any(&self) -> bool {
        self.collision || self.offroad
    }

    pub fn kind(&self) -> Option<InfractionKind> {
        if self.collision {
            Some(InfractionKind::Collision)
        } else if self.offroad {
            Some(InfractionKind::Offroad)
        } else {
            None
        }
    }
}

impl SceneState {
    /// Initial scene from a scenario spec. Histories are left-padded or
    /// truncated to the configured horizon.
    pub fn from_spec(spec: &ScenarioSpec, history_len: usize) -> SceneState {
        let agents = spec
            .agents
            .iter()
            .map(|a| {
                let mut h = a.history.clone();
                while h.len() < history_len {
                    h.insert(0, h[0]);
                }
                while h.len() > history_len {
                    h.remove(0);
                }
                SceneAgent {
                    state: *h.last().unwrap(),
                    history: h,
                    hero: a.hero,
                    alive: true,
                }
            })
            .collect();
        SceneState {
            agents,
            map: spec.map.clone(),
            tick: 0,
        }
    }

    pub fn snapshots(&self) -> Vec<AgentSnapshot<f64>> {
        self.agents
            .iter()
            .map(|a| AgentSnapshot {
                history: a.history.iter().map(|s| [s.x, s.y, s.theta, s.v]).collect(),
                hero: a.hero,
                alive: a.alive,
            })
            .collect()
    }

    pub fn state_pairs(&self) -> Vec<(AgentKinematicState, bool)> {
        self.agents.iter().map(|a| (a.state, a.alive)).collect()
    }

    pub fn joint_states(&self) -> Vec<AgentKinematicState> {
        self.agents.iter().map(|a| a.state).collect()
    }

    /// Features for one agent at the current tick.
    pub fn features(&self, agent: usize, cfg: &FeatureConfig) -> Vec<f64> {
        extract_features(&self.snapshots(), &self.map, agent, cfg)
    }
}

/// Advance every alive agent one tick and detect infractions on the new
/// states. Each agent infracting this step receives reward -1 (once, even
/// if it both collides and leaves the road); everyone else gets 0.
pub fn step_scene(
    scene: &SceneState,
    joint_action: &[AgentAction],
    dt: f64,
) -> Result<(SceneState, Vec<f64>, Vec<InfractionFlags>), SimError> {
    let n = scene.agents.len();
    if joint_action.len() != n {
        return Err(SimError::ActionCountMismatch {
            expected: n,
            got: joint_action.len(),
        });
    }
    let mut next = scene.clone();
    next.tick += 1;
    for (agent, action) in next.agents.iter_mut().zip(joint_action) {
        if !agent.alive {
            continue;
        }
        agent.state = bicycle_step(&agent.state, action, dt)?.state;
        agent.history.remove(0);
        agent.history.push(agent.state);
    }

    let mut flags = vec![InfractionFlags::default(); n];
    let boxes: Vec<_> = next.agents.iter().map(|a| a.state.bounding_box()).collect();
    for i in 0..n {
        if !next.agents[i].alive {
            continue;
        }
        if offroad_check(&boxes[i], &next.map.road_polygon) {
            flags[i].offroad = true;
        }
        for j in i + 1..n {
            if next.agents[j].alive && obb_overlap(&boxes[i], &boxes[j]) {
                flags[i].collision = true;
                flags[j].collision = true;
            }
        }
    }
    let rewards = flags
        .iter()
        .map(|f| if f.any() { -1.0 } else { 0.0 })
        .collect();
    Ok((next, rewards, flags))
}

/// Speed-limit shaping term: `(bonus, terminate)` per the shaped-reward
/// rule with `C = 30`.
pub fn shaped_reward(v: f64, speed_limit: f64) -> (f64, bool) {
    let delta = (v - speed_limit).abs();
    (0.5 * (SHAPED_C - delta) / SHAPED_C, delta >= SHAPED_C)
}

/// Who controls the non-hero agents of a rollout.
pub enum ControlSource<'a> {
    Policy {
        params: &'a ParameterSet,
        mode: SampleMode,
    },
    Oracle,
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions {
    pub ticks: usize,
    /// End the whole scenario at the first infraction (RL-style). Imitation
    /// rollouts over nominal logs keep going so every tick stays aligned
    /// with the expert horizon.
    pub terminate_on_infraction: bool,
    /// Add the speed-limit shaping bonus and its termination rule.
    pub shaped: bool,
    /// Record feature vectors for learner agents (PPO batches need them).
    pub record_features: bool,
}

impl RolloutOptions {
    pub fn rl(ticks: usize) -> Self {
        RolloutOptions {
            ticks,
            terminate_on_infraction: true,
            shaped: false,
            record_features: true,
        }
    }

    pub fn il(ticks: usize) -> Self {
        RolloutOptions {
            ticks,
            terminate_on_infraction: false,
            shaped: false,
            record_features: false,
        }
    }
}

/// Roll a scenario forward under the policy mixture: hero agents follow
/// their scripts, everyone else follows `source`. Deterministic given
/// `(spec, mean mode)` or `(spec, rng seed)`.
pub fn rollout(
    spec: &ScenarioSpec,
    source: &ControlSource,
    opts: &RolloutOptions,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, SimError> {
    let mut scene = SceneState::from_spec(spec, cfg.features.history_len);
    let n = scene.agents.len();
    let hero_indices = spec.hero_indices();
    let mut hero_rt = vec![HeroRuntime::default(); hero_indices.len()];

    let agent_source: Vec<ActionSource> = scene
        .agents
        .iter()
        .map(|a| {
            if a.hero {
                ActionSource::Hero
            } else {
                match source {
                    ControlSource::Policy { .. } => ActionSource::Learner,
                    ControlSource::Oracle => ActionSource::Oracle,
                }
            }
        })
        .collect();

    let mut traj = Trajectory {
        dt: cfg.dt,
        hero: scene.agents.iter().map(|a| a.hero).collect(),
        source: agent_source,
        states: vec![scene.joint_states()],
        actions: Vec::new(),
        rewards: Vec::new(),
        log_probs: Vec::new(),
        features: if opts.record_features {
            Some(Vec::new())
        } else {
            None
        },
        termination_tick: None,
        first_infraction: vec![None; n],
    };

    for t in 0..opts.ticks {
        let pairs = scene.state_pairs();
        let snapshots = scene.snapshots();
        let mut actions = Vec::with_capacity(n);
        let mut log_probs = vec![0.0; n];
        let mut tick_features: Vec<Vec<f64>> = vec![Vec::new(); n];
        for i in 0..n {
            let action = if scene.agents[i].hero {
                let k = hero_indices.iter().position(|&h| h == i).unwrap();
                hero_action(
                    i,
                    &pairs,
                    &spec.hero_params[k],
                    &mut hero_rt[k],
                    t,
                    &scene.map,
                    &cfg.idm,
                    &cfg.bounds,
                )
            } else {
                match source {
                    ControlSource::Policy { params, mode } => {
                        let feats = extract_features(&snapshots, &scene.map, i, &cfg.features);
                        let dist = policy_forward_f64(params, &feats)?;
                        let (a, _clipped) = sample_action(&dist, rng, *mode, &cfg.bounds);
                        log_probs[i] = log_prob_f64(&dist, &a);
                        if opts.record_features {
                            tick_features[i] = feats;
                        }
                        a
                    }
                    ControlSource::Oracle => crate::scenario::expert_oracle_action(
                        &pairs,
                        i,
                        &scene.map,
                        &cfg.idm,
                        &cfg.bounds,
                    ),
                }
            };
            actions.push(action);
        }

        let (next, raw_rewards, flags) = step_scene(&scene, &actions, cfg.dt)?;

        let mut rewards = vec![0.0; n];
        let mut shaped_stop = false;
        for i in 0..n {
            let newly = flags[i].any() && traj.first_infraction[i].is_none();
            if newly {
                traj.first_infraction[i] = Some((t + 1, flags[i].kind().unwrap()));
                rewards[i] = raw_rewards[i];
            }
            if opts.shaped && !scene.agents[i].hero {
                let s = &next.agents[i].state;
                let limit = next
                    .map
                    .assign_lane(s.position(), s.theta)
                    .map(|(l, _)| next.map.lane(l).speed_limit)
                    .unwrap_or_else(|| next.map.lanes[0].speed_limit);
                let (bonus, stop) = shaped_reward(s.v, limit);
                rewards[i] += bonus;
                shaped_stop |= stop;
            }
        }

        traj.actions.push(actions);
        traj.rewards.push(rewards);
        traj.log_probs.push(log_probs);
        if let Some(f) = traj.features.as_mut() {
            f.push(tick_features);
        }
        traj.states.push(next.joint_states());
        scene = next;

        let any_infraction = flags.iter().any(|f| f.any());
        if (opts.terminate_on_infraction && any_infraction) || (opts.shaped && shaped_stop) {
            traj.termination_tick = Some(t + 1);
            break;
        }
    }

    // Terminal-state features for the value bootstrap: one extra entry
    // beyond the recorded decisions.
    if let Some(f) = traj.features.as_mut() {
        let snapshots = scene.snapshots();
        let mut last = vec![Vec::new(); n];
        for (i, row) in last.iter_mut().enumerate() {
            if !scene.agents[i].hero {
                *row = extract_features(&snapshots, &scene.map, i, &cfg.features);
            }
        }
        f.push(last);
    }
    Ok(traj)
}

/// Re-run a trajectory's recorded actions through the stepper; used to
/// validate logs and by tests.
pub fn replay_states(
    spec: &ScenarioSpec,
    actions: &[Vec<AgentAction>],
    cfg: &SimConfig,
) -> Result<Vec<Vec<AgentKinematicState>>, SimError> {
    let mut scene = SceneState::from_spec(spec, cfg.features.history_len);
    let mut out = vec![scene.joint_states()];
    for a in actions {
        let (next, _, _) = step_scene(&scene, a, cfg.dt)?;
        out.push(next.joint_states());
        scene = next;
    }
    Ok(out)
}
