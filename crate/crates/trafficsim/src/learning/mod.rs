//! Training objectives and the combined update loop: closed-loop imitation
//! with BPTT, factorized PPO, behavior cloning, and AdamW.

pub mod gae;
pub mod losses;
pub mod optim;
pub mod ppo;
pub mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{PolicyError, SampleMode};
use crate::scenario::ScenarioError;
use crate::simulator::{SimConfig, SimError};

pub use gae::{compute_gae, compute_value_targets};
pub use losses::{bc_loss, il_loss, IlLossOutput};
pub use optim::{optimizer_step, AdamState, StepOutcome};
pub use ppo::{ppo_losses, AdvantageBatch, PpoOutput, Sample};
pub use trainer::{train_epoch, EpochReport, TrainState};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("imitation loss requires a nominal scenario with an expert log")]
    NotNominal,
    #[error("rollout horizon {rollout_t} exceeds expert log length {expert_t}")]
    RolloutExceedsExpert { rollout_t: usize, expert_t: usize },
    #[error("non-finite imitation loss at tick {tick}")]
    NonFiniteLoss { tick: usize },
    #[error("mode/data inconsistency: {0}")]
    ModeDataInconsistent(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Bc,
    Il,
    Rl,
    RlShaped,
    BcRl,
    Rtr,
}

impl TrainMode {
    pub fn uses_rl(self) -> bool {
        matches!(
            self,
            TrainMode::Rl | TrainMode::RlShaped | TrainMode::BcRl | TrainMode::Rtr
        )
    }

    pub fn uses_il(self) -> bool {
        matches!(self, TrainMode::Il | TrainMode::Rtr)
    }

    pub fn uses_bc(self) -> bool {
        matches!(self, TrainMode::Bc | TrainMode::BcRl)
    }

    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Bc => "bc",
            TrainMode::Il => "il",
            TrainMode::Rl => "rl",
            TrainMode::RlShaped => "rl_shaped",
            TrainMode::BcRl => "bc_rl",
            TrainMode::Rtr => "rtr",
        }
    }
}

/// Flat training configuration. Defaults follow the published
/// hyperparameter table; the desk-scale configs shipped with the tool
/// override the learning rate (see `configs/`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub config_version: u32,
    pub seed: u64,
    pub mode: TrainMode,
    /// Weight of the RL gradient in the combined update (lambda).
    pub lambda_rl: f64,
    /// Long-tail share of the initial-state mixture.
    pub alpha: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub il_minibatch: usize,
    pub ppo_batch: usize,
    pub ppo_minibatch: usize,
    pub ppo_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub total_epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub huber_delta: f64,
    pub rollout_t: usize,
    pub il_action_mode: SampleMode,
    pub hidden: Vec<usize>,
    pub history_len: usize,
    pub neighbor_k: usize,
    pub dt: f64,
    pub max_accel: f64,
    pub max_steer: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            config_version: CONFIG_VERSION,
            seed: 0,
            mode: TrainMode::Rtr,
            lambda_rl: 5.0,
            alpha: 0.5,
            gamma: 0.79,
            gae_lambda: 1.0,
            clip_eps: 0.2,
            il_minibatch: 32,
            ppo_batch: 192,
            ppo_minibatch: 32,
            ppo_epochs: 1,
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            grad_clip_norm: 1.0,
            total_epochs: 10,
            lr_decay_factor: 0.2,
            lr_decay_every_epochs: 3,
            huber_delta: 1.0,
            rollout_t: 20,
            il_action_mode: SampleMode::Mean,
            hidden: vec![64, 64, 64],
            history_len: 10,
            neighbor_k: 4,
            dt: crate::dynamics::DEFAULT_DT,
            max_accel: 6.0,
            max_steer: 0.45,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.into()));
        if self.config_version != CONFIG_VERSION {
            return bad("unsupported config_version");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if self.lambda_rl < 0.0 {
            return bad("lambda_rl must be >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must be in (0, 1)");
        }
        for (name, v) in [
            ("il_minibatch", self.il_minibatch),
            ("ppo_batch", self.ppo_batch),
            ("ppo_minibatch", self.ppo_minibatch),
            ("ppo_epochs", self.ppo_epochs),
            ("total_epochs", self.total_epochs),
            ("lr_decay_every_epochs", self.lr_decay_every_epochs),
            ("rollout_t", self.rollout_t),
            ("history_len", self.history_len),
        ] {
            if v < 1 {
                return Err(TrainError::BadConfig(format!("{name} must be >= 1")));
            }
        }
        if self.dt <= 0.0 || self.huber_delta <= 0.0 || self.learning_rate <= 0.0 {
            return bad("dt, huber_delta, learning_rate must be positive");
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            bounds: crate::dynamics::ActionBounds {
                max_accel: self.max_accel,
                max_steer: self.max_steer,
            },
            features: crate::policy::FeatureConfig {
                history_len: self.history_len,
                neighbor_k: self.neighbor_k,
            },
            idm: crate::scenario::IdmParams::default(),
        }
    }

    /// Learning rate at a (zero-based) epoch under the step decay schedule.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.learning_rate
            * self
                .lr_decay_factor
                .powi((epoch / self.lr_decay_every_epochs) as i32)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| TrainError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
