use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actors::ActorLossMode;
use crate::diffcore::AdamConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::exploration::{EpsilonSchedule, ExploreConfig, ExploreMode};

/// Environment variable overriding the configured seed.
pub const SEED_ENV_VAR: &str = "EMIX_SEED";

/// Complete description of one training run. Field names in the JSON form
/// follow the usual hyperparameter symbols (`C_1`, `N_2`, `T`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub seed: u64,
    /// Training episodes; one critic and one actor update follow each.
    pub episodes: usize,
    pub gamma: f64,
    /// Trace decay shared by the TD(λ) and tree-backup targets.
    pub lambda: f64,
    /// Weight of the on-policy arm of the critic loss.
    pub c: f64,
    /// Weight of the off-policy arm of the actor gradient.
    pub v: f64,
    /// Logit bonus scale of the exploration rule.
    #[serde(alias = "beta")]
    pub bonus_beta: f64,
    #[serde(rename = "C_1")]
    pub c1: f64,
    #[serde(rename = "C_2")]
    pub c2: f64,
    /// Ensemble size.
    #[serde(rename = "N")]
    pub ensemble_size: usize,
    /// On-policy batch size in transitions (most recent episodes).
    #[serde(rename = "N_1")]
    pub n1: usize,
    /// Off-policy batch size in transitions (segments of `segment_len`).
    #[serde(rename = "N_2")]
    pub n2: usize,
    pub on_buffer_episodes: usize,
    pub off_buffer_episodes: usize,
    pub segment_len: usize,
    /// Evaluation interval in environment steps, before `T_scale`.
    #[serde(rename = "T")]
    pub eval_interval: usize,
    /// Multiplier applied to `T` for small environments.
    #[serde(rename = "T_scale")]
    pub eval_interval_scale: f64,
    /// Evaluation episodes per evaluation.
    #[serde(rename = "U")]
    pub eval_episodes: usize,
    /// Training steps between target-network syncs.
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the training episodes over which ε decays.
    pub epsilon_decay_fraction: f64,
    pub critic_adam: AdamConfig,
    pub actor_adam: AdamConfig,
    /// Observation frames per agent window.
    pub window: usize,
    pub hidden: usize,
    pub mixer_hidden: usize,
    /// Kurtosis weighting of next-step joint values in the targets.
    pub weighting: bool,
    pub exploration: ExploreMode,
    pub actor_loss: ActorLossMode,
    /// Fill the wall-clock column (breaks byte-identical reruns).
    pub log_wall_clock: bool,
    /// Write every training step to `episodes.jsonl`.
    pub log_episodes: bool,
    /// Dump the off-policy buffer to `replay.jsonl` at the end.
    pub dump_replay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::MatrixGame { payoff: crate::envs::MatrixGame::default_payoff() },
            seed: 0,
            episodes: 1000,
            gamma: 0.99,
            lambda: 0.8,
            c: 0.5,
            v: 0.5,
            bonus_beta: 0.001,
            c1: 0.01,
            c2: 0.001,
            ensemble_size: 10,
            n1: 32,
            n2: 5000,
            on_buffer_episodes: 32,
            off_buffer_episodes: 5000,
            segment_len: 8,
            eval_interval: 20_000,
            eval_interval_scale: 1.0,
            eval_episodes: 24,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.1,
            critic_adam: AdamConfig::default(),
            actor_adam: AdamConfig::default(),
            window: 4,
            hidden: 64,
            mixer_hidden: 64,
            weighting: true,
            exploration: ExploreMode::KurtosisGated,
            actor_loss: ActorLossMode::Mixed,
            log_wall_clock: false,
            log_episodes: false,
            dump_replay: false,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `EMIX_SEED` when it is set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV_VAR) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV_VAR}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {x} outside [0,1]")))
            }
        };
        let positive = |name: &str, x: usize| {
            if x > 0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} outside [0,1)", self.gamma)));
        }
        unit("lambda", self.lambda)?;
        unit("c", self.c)?;
        unit("v", self.v)?;
        unit("epsilon_start", self.epsilon_start)?;
        unit("epsilon_end", self.epsilon_end)?;
        unit("epsilon_decay_fraction", self.epsilon_decay_fraction)?;
        for (name, x) in [("bonus_beta", self.bonus_beta), ("C_1", self.c1), ("C_2", self.c2)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} = {x} must be finite and nonnegative")));
            }
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble size N must be at least 2".into()));
        }
        positive("N_1", self.n1)?;
        positive("N_2", self.n2)?;
        positive("on_buffer_episodes", self.on_buffer_episodes)?;
        positive("off_buffer_episodes", self.off_buffer_episodes)?;
        positive("segment_len", self.segment_len)?;
        positive("U", self.eval_episodes)?;
        positive("target_sync", self.target_sync)?;
        positive("window", self.window)?;
        positive("hidden", self.hidden)?;
        positive("mixer_hidden", self.mixer_hidden)?;
        if !(self.eval_interval_scale > 0.0) {
            return Err(Error::Config("T_scale must be positive".into()));
        }
        if self.effective_eval_interval() == 0 {
            return Err(Error::Config("T x T_scale rounds to zero environment steps".into()));
        }
        for a in [&self.critic_adam, &self.actor_adam] {
            if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
            }
        }
        Ok(())
    }

    /// Environment steps between evaluations.
    pub fn effective_eval_interval(&self) -> usize {
        (self.eval_interval as f64 * self.eval_interval_scale).round() as usize
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_steps: (self.episodes as f64 * self.epsilon_decay_fraction).round() as usize,
        }
    }

    pub fn explore(&self) -> ExploreConfig {
        ExploreConfig { bonus_beta: self.bonus_beta, mode: self.exploration }
    }

    /// Sets one ablation axis from its textual value.
    pub fn set_axis(&mut self, axis: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for axis {axis}"));
        let num = || value.parse::<f64>().map_err(|_| bad());
        match axis {
            "exploration" => self.exploration = serde_json::from_value(serde_json::Value::String(value.into())).map_err(|_| bad())?,
            "actor-loss" | "actor_loss" => {
                self.actor_loss = serde_json::from_value(serde_json::Value::String(value.into())).map_err(|_| bad())?
            }
            "C_2" | "c2" => self.c2 = num()?,
            "C_1" | "c1" => self.c1 = num()?,
            "N" | "ensemble-size" | "ensemble_size" => self.ensemble_size = value.parse().map_err(|_| bad())?,
            "bonus_beta" | "beta" => self.bonus_beta = num()?,
            "c" => self.c = num()?,
            "weighting" => self.weighting = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown ablation axis {axis:?}"))),
        }
        self.validate()
    }
}
