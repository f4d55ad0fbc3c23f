//! Scenario data model: logical scenario families with parameter ranges,
//! concrete scenario instances (initial states, hero scripts, optional
//! expert log), and their on-disk form.

pub mod generate;
pub mod hero;
pub mod maps;
pub mod oracle;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{bicycle_step, AgentAction, AgentKinematicState};
use crate::lane_graph::{build_lane_graph, LaneGraph, MapSpec};

pub use generate::{sample_concrete_scenario, sample_initial_state};
pub use hero::{hero_action, HeroRuntime};
pub use oracle::{expert_oracle_action, IdmParams};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("placement retry budget ({0}) exhausted without a valid configuration")]
    PlacementFailed(usize),
    #[error("mixture weight alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("scenario set required by the mixture is empty")]
    EmptySet,
    #[error("scenario file version {0} is not supported (expected {SCENARIO_FORMAT_VERSION})")]
    VersionMismatch(u32),
    #[error("map error: {0}")]
    Map(#[from] crate::lane_graph::MapError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("expert log failed validation: {0}")]
    BadExpertLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    CutIn,
    HardBrake,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Distance,
    TimeToCollision,
}

/// Closed interval for one scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "empty parameter range");
        ParamRange { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        ParamRange { lo: v, hi: v }
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// A parameterized scenario family. Concrete scenarios are drawn by
/// sampling each range uniformly and independently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogicalScenario {
    pub family: ScenarioFamily,
    pub trigger_kind: TriggerKind,
    pub trigger_distance: ParamRange,
    pub trigger_ttc: ParamRange,
    /// In [0, 1]; scales how violently the hero executes its maneuver.
    pub aggressiveness: ParamRange,
    pub hero_speed: ParamRange,
    pub traffic_speed: ParamRange,
    pub initial_gap: ParamRange,
    pub map_variants: Vec<u64>,
    pub hero_count: usize,
    /// Learner-controlled agents placed around the hero.
    pub traffic_count: usize,
}

/// Concrete hero parameters (one draw of theta).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeroParams {
    pub family: ScenarioFamily,
    pub trigger_kind: TriggerKind,
    pub trigger_distance: f64,
    pub trigger_ttc: f64,
    pub aggressiveness: f64,
    pub cruise_speed: f64,
    /// Agent index the hero acts against.
    pub target_agent: usize,
    /// Lane the hero starts in and the lane it cuts / merges into.
    pub hero_lane: usize,
    pub target_lane: usize,
}

/// Initial condition for one agent: H past ticks, oldest first; the last
/// entry is the state at tick zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentInit {
    pub history: Vec<AgentKinematicState>,
    pub hero: bool,
}

/// Expert demonstration: joint states for ticks `0..=T` and the actions
/// that produced them, recorded by the oracle that generated the log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertTrajectory {
    pub dt: f64,
    pub states: Vec<Vec<AgentKinematicState>>,
    pub actions: Vec<Vec<AgentAction>>,
}

impl ExpertTrajectory {
    pub fn ticks(&self) -> usize {
        self.actions.len()
    }

    /// Consecutive states must satisfy the bicycle model under the recorded
    /// actions to 1e-9 per tick.
    pub fn validate_replay(&self) -> Result<(), ScenarioError> {
        for t in 0..self.actions.len() {
            for (i, (s, a)) in self.states[t].iter().zip(&self.actions[t]).enumerate() {
                let next = bicycle_step(s, a, self.dt)
                    .map_err(|e| ScenarioError::BadExpertLog(e.to_string()))?
                    .state;
                let rec = &self.states[t + 1][i];
                let err = (next.x - rec.x)
                    .abs()
                    .max((next.y - rec.y).abs())
                    .max((next.theta - rec.theta).abs())
                    .max((next.v - rec.v).abs());
                if err > 1e-9 {
                    return Err(ScenarioError::BadExpertLog(format!(
                        "replay residual {err} at tick {t}, agent {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A fully concrete scenario ready to roll out.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub id: String,
    /// Path or label of the map this scenario was built on.
    pub map_ref: String,
    pub map_spec: MapSpec,
    pub map: Arc<LaneGraph>,
    pub agents: Vec<AgentInit>,
    /// One entry per hero-flagged agent, in agent order.
    pub hero_params: Vec<HeroParams>,
    /// Present iff this is a nominal scenario.
    pub expert: Option<ExpertTrajectory>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn hero_indices(&self) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.hero)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_nominal(&self) -> bool {
        self.expert.is_some()
    }

    /// Hero params for an agent index, if it is a hero.
    pub fn hero_params_for(&self, agent: usize) -> Option<&HeroParams> {
        let heroes = self.hero_indices();
        heroes
            .iter()
            .position(|&h| h == agent)
            .map(|k| &self.hero_params[k])
    }
}

/// Serialized scenario. The map is stored by reference (path relative to
/// the scenario file) so many scenarios can share one map file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub version: u32,
    pub id: String,
    pub map_ref: String,
    pub agents: Vec<AgentInit>,
    pub hero_params: Vec<HeroParams>,
    pub expert: Option<ExpertTrajectory>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            version: SCENARIO_FORMAT_VERSION,
            id: self.id.clone(),
            map_ref: self.map_ref.clone(),
            agents: self.agents.clone(),
            hero_params: self.hero_params.clone(),
            expert: self.expert.clone(),
            seed: self.seed,
        }
    }

    /// Load a scenario file, resolving `map_ref` relative to its directory.
    pub fn load(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let file: ScenarioFile = serde_json::from_str(&text)?;
        if file.version != SCENARIO_FORMAT_VERSION {
            return Err(ScenarioError::VersionMismatch(file.version));
        }
        let map_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&file.map_ref);
        let map_text = std::fs::read_to_string(&map_path)?;
        let map_spec: MapSpec = serde_json::from_str(&map_text)?;
        let map = Arc::new(build_lane_graph(&map_spec)?);
        Ok(ScenarioSpec {
            id: file.id,
            map_ref: file.map_ref,
            map_spec,
            map,
            agents: file.agents,
            hero_params: file.hero_params,
            expert: file.expert,
            seed: file.seed,
        })
    }
}
