//! Cooperative Dec-POMDP environments.
//!
//! All environments share one reward among the agents, expose per-agent
//! partial observations for the actors and a global state vector for the
//! mixer (training only), and are deterministic functions of the reset seed
//! and the action sequence.

mod corridors;
mod log;
mod matrix_game;
mod predator_prey;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use corridors::TwoCorridors;
pub use log::{read_jsonl, write_jsonl, StepRecord};
pub use matrix_game::MatrixGame;
pub use predator_prey::PredatorPrey;

use crate::error::{Error, Result};

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub num_agents: usize,
    pub action_counts: Vec<usize>,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub max_steps: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents < 2 {
            return Err(Error::Env(format!("need at least 2 agents, got {}", self.num_agents)));
        }
        if self.action_counts.len() != self.num_agents || self.action_counts.iter().any(|&m| m < 2) {
            return Err(Error::Env("every agent needs at least 2 actions".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Env(format!("discount must lie in [0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Outcome of a reset or step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    pub terminated: bool,
    pub state: Vec<f64>,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, seed: u64) -> StepResult;

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;

    /// Whether the current episode ended in the task's goal condition.
    fn success(&self) -> bool;

    /// Informs the environment of the training episode about to start.
    fn set_episode_index(&mut self, _episode: usize) {}
}

/// Shared argument checks for `step`.
pub(crate) fn check_actions(spec: &EnvSpec, joint_action: &[usize], done: bool) -> Result<()> {
    if done {
        return Err(Error::Env("step called after termination".into()));
    }
    if joint_action.len() != spec.num_agents {
        return Err(Error::Env(format!("expected {} actions, got {}", spec.num_agents, joint_action.len())));
    }
    for (i, (&a, &m)) in joint_action.iter().zip(&spec.action_counts).enumerate() {
        if a >= m {
            return Err(Error::Env(format!("agent {i}: action {a} out of range 0..{m}")));
        }
    }
    Ok(())
}

/// Environment selection as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum EnvConfig {
    MatrixGame {
        #[serde(default = "MatrixGame::default_payoff")]
        payoff: Vec<Vec<f64>>,
    },
    PredatorPrey {
        #[serde(default = "PredatorPrey::default_size")]
        size: usize,
        #[serde(default = "PredatorPrey::default_predators")]
        predators: usize,
        #[serde(default = "PredatorPrey::default_max_steps")]
        max_steps: usize,
    },
    TwoCorridors {
        /// First episode with the short corridor closed; `None` means half
        /// of the training budget.
        #[serde(default)]
        closure_episode: Option<usize>,
        #[serde(default = "TwoCorridors::default_max_steps")]
        max_steps: usize,
    },
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::MatrixGame { .. } => "matrix_game",
            EnvConfig::PredatorPrey { .. } => "predator_prey",
            EnvConfig::TwoCorridors { .. } => "two_corridors",
        }
    }

    /// Builds the environment; `budget` is the number of training episodes.
    pub fn build(&self, gamma: f64, budget: usize) -> Result<Box<dyn Environment>> {
        let env: Box<dyn Environment> = match self {
            EnvConfig::MatrixGame { payoff } => Box::new(MatrixGame::new(payoff.clone(), gamma)?),
            EnvConfig::PredatorPrey { size, predators, max_steps } => {
                Box::new(PredatorPrey::new(*size, *predators, *max_steps, gamma)?)
            }
            EnvConfig::TwoCorridors { closure_episode, max_steps } => {
                Box::new(TwoCorridors::new(closure_episode.unwrap_or(budget / 2), *max_steps, gamma)?)
            }
        };
        env.spec().validate()?;
        Ok(env)
    }
}

/// The last `W` observations of one agent, oldest first, zero-padded at the
/// start of an episode. Stands in for the action-observation history.
#[derive(Clone, Debug)]
pub struct ObsWindow {
    window: usize,
    obs_dim: usize,
    frames: VecDeque<Vec<f64>>,
}

impl ObsWindow {
    pub fn new(window: usize, obs_dim: usize) -> Self {
        assert!(window >= 1);
        Self { window, obs_dim, frames: VecDeque::with_capacity(window) }
    }

    pub fn len(&self) -> usize {
        self.window * self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn push(&mut self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::Env(format!("observation length {} != {}", obs.len(), self.obs_dim)));
        }
        if self.frames.len() == self.window {
            self.frames.pop_front();
        }
        self.frames.push_back(obs.to_vec());
        Ok(())
    }

    /// Concatenated window, length `W · obs_dim`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = vec![0.0; (self.window - self.frames.len()) * self.obs_dim];
        for f in &self.frames {
            out.extend_from_slice(f);
        }
        out
    }
}

pub(crate) fn one_hot(len: usize, idx: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if let Some(i) = idx {
        v[i] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_pads_with_zeros_and_slides() {
        let mut w = ObsWindow::new(3, 2);
        assert_eq!(w.to_vec(), vec![0.0; 6]);
        w.push(&[1.0, 2.0]).unwrap();
        assert_eq!(w.to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        w.push(&[3.0, 4.0]).unwrap();
        w.push(&[5.0, 6.0]).unwrap();
        w.push(&[7.0, 8.0]).unwrap();
        assert_eq!(w.to_vec(), vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(w.to_vec().len(), w.len());
        assert!(w.push(&[1.0]).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = EnvSpec {
            num_agents: 2,
            action_counts: vec![3, 3],
            obs_dim: 1,
            state_dim: 1,
            max_steps: 1,
            gamma: 0.99,
        };
        s.validate().unwrap();
        s.gamma = 1.0;
        assert!(s.validate().is_err());
        s.gamma = 0.5;
        s.action_counts = vec![3, 1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = EnvConfig::TwoCorridors { closure_episode: Some(10), max_steps: 30 };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"id\":\"two_corridors\""));
        assert_eq!(serde_json::from_str::<EnvConfig>(&s).unwrap(), c);
        let m: EnvConfig = serde_json::from_str(r#"{"id":"matrix_game"}"#).unwrap();
        assert_eq!(m, EnvConfig::MatrixGame { payoff: MatrixGame::default_payoff() });
    }
}
