use super::{check_actions, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

/// One-shot two-player cooperative game with a shared payoff table.
///
/// The default table has its optimum (8) surrounded by heavy penalties,
/// so independent greedy learners drift toward the safer 6 or 0 cells.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: EnvSpec,
    payoff: Vec<Vec<f64>>,
    done: bool,
    last_reward: f64,
}

impl MatrixGame {
    pub fn default_payoff() -> Vec<Vec<f64>> {
        vec![vec![8.0, -12.0, -12.0], vec![-12.0, 0.0, 0.0], vec![-12.0, 0.0, 6.0]]
    }

    pub fn new(payoff: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let rows = payoff.len();
        let cols = payoff.first().map_or(0, Vec::len);
        if rows < 2 || cols < 2 || payoff.iter().any(|r| r.len() != cols) {
            return Err(Error::Env("payoff must be a rectangular table of at least 2x2".into()));
        }
        if payoff.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Env("payoff entries must be finite".into()));
        }
        Ok(Self {
            spec: EnvSpec {
                num_agents: 2,
                action_counts: vec![rows, cols],
                obs_dim: 1,
                state_dim: 1,
                max_steps: 1,
                gamma,
            },
            payoff,
            done: false,
            last_reward: 0.0,
        })
    }

    pub fn payoff(&self) -> &[Vec<f64>] {
        &self.payoff
    }

    pub fn optimum(&self) -> f64 {
        self.payoff.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    fn blank(&self, reward: f64, terminated: bool) -> StepResult {
        StepResult { observations: vec![vec![0.0]; 2], reward, terminated, state: vec![0.0] }
    }
}

impl Environment for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.done = false;
        self.last_reward = 0.0;
        self.blank(0.0, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        check_actions(&self.spec, joint_action, self.done)?;
        let r = self.payoff[joint_action[0]][joint_action[1]];
        self.done = true;
        self.last_reward = r;
        Ok(self.blank(r, true))
    }

    fn success(&self) -> bool {
        self.done && self.last_reward >= self.optimum()
    }
}
