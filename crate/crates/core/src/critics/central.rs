use rand::Rng;

use super::ensemble::{mean_of, EnsembleCritic};
use super::mixer::{mix, MixerNet, QtotEval};
use crate::diffcore::{ParamStore, Tape, Tensor2, Var};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::stats::{excess_kurtosis, raw_kurtosis, uncertainty_weight, EnsembleSample, VAR_EPS};

/// All per-agent ensembles plus the mixer. One [`ParamStore`] holds the
/// parameters of every component; live and target copies are two stores
/// with identical names.
#[derive(Clone, Debug)]
pub struct CentralCritic {
    critics: Vec<EnsembleCritic>,
    mixer: MixerNet,
}

impl CentralCritic {
    pub fn new(spec: &EnvSpec, window: usize, ensemble_size: usize, hidden: usize, mixer_hidden: usize) -> Self {
        let critics = (0..spec.num_agents)
            .map(|i| EnsembleCritic::new(i, window * spec.obs_dim, spec.action_counts[i], ensemble_size, hidden))
            .collect();
        Self { critics, mixer: MixerNet::new(spec.state_dim, spec.num_agents, mixer_hidden) }
    }

    pub fn from_parts(critics: Vec<EnsembleCritic>, mixer: MixerNet) -> Result<Self> {
        if critics.len() != mixer.num_agents() || critics.is_empty() {
            return Err(Error::Shape {
                op: "CentralCritic",
                detail: format!("{} ensembles for a mixer over {} agents", critics.len(), mixer.num_agents()),
            });
        }
        Ok(Self { critics, mixer })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for c in &self.critics {
            c.init(store, rng)?;
        }
        self.mixer.init(store, rng)
    }

    pub fn num_agents(&self) -> usize {
        self.critics.len()
    }

    pub fn critic(&self, i: usize) -> &EnsembleCritic {
        &self.critics[i]
    }

    pub fn critics(&self) -> &[EnsembleCritic] {
        &self.critics
    }

    pub fn mixer(&self) -> &MixerNet {
        &self.mixer
    }

    /// Tape-free evaluation on a batch: `windows[i]` is `B x input_dim_i`,
    /// `states` is `B x state_dim`.
    pub fn evaluate(&self, store: &ParamStore, windows: &[Tensor2], states: &Tensor2) -> Result<CriticBatch> {
        self.check_batch(windows.iter().map(Tensor2::rows), states.rows())?;
        let member_q = self
            .critics
            .iter()
            .zip(windows)
            .map(|(c, w)| c.all_member_q(store, w))
            .collect::<Result<Vec<_>>>()?;
        let mean_q = member_q.iter().map(|m| mean_of(m)).collect();
        let (lambdas, bias) = self.mixer.coefficients(store, states)?;
        Ok(CriticBatch { member_q, mean_q, lambdas, bias })
    }

    /// Records every ensemble and the mixer on `tape`.
    pub fn record(&self, tape: &mut Tape, store: &ParamStore, windows: &[Var], states: Var) -> Result<RecordedCritic> {
        self.check_batch(windows.iter().map(|&w| tape.value(w).rows()), tape.value(states).rows())?;
        let mut members = Vec::with_capacity(self.critics.len());
        let mut means = Vec::with_capacity(self.critics.len());
        for (c, &w) in self.critics.iter().zip(windows) {
            let (outs, mean) = c.record(tape, store, w)?;
            members.push(outs);
            means.push(mean);
        }
        let (lambdas, bias) = self.mixer.record(tape, store, states)?;
        Ok(RecordedCritic { members, means, lambdas, bias })
    }

    fn check_batch(&self, rows: impl ExactSizeIterator<Item = usize>, state_rows: usize) -> Result<()> {
        if rows.len() != self.critics.len() {
            return Err(Error::Shape {
                op: "CentralCritic",
                detail: format!("{} window batches for {} agents", rows.len(), self.critics.len()),
            });
        }
        let rows: Vec<usize> = rows.collect();
        if rows.iter().any(|&r| r != state_rows) {
            return Err(Error::Shape { op: "CentralCritic", detail: format!("window rows {rows:?} vs {state_rows} states") });
        }
        Ok(())
    }
}

/// Tape nodes produced by [`CentralCritic::record`].
#[derive(Clone, Debug)]
pub struct RecordedCritic {
    pub members: Vec<Vec<Var>>,
    pub means: Vec<Var>,
    pub lambdas: Var,
    pub bias: Var,
}

/// Evaluated critic outputs for a batch of joint histories.
#[derive(Clone, Debug)]
pub struct CriticBatch {
    /// `[agent][member]`, each `B x M_i`.
    pub member_q: Vec<Vec<Tensor2>>,
    /// `[agent]`, each `B x M_i`.
    pub mean_q: Vec<Tensor2>,
    /// `B x K`.
    pub lambdas: Tensor2,
    /// `B x 1`.
    pub bias: Tensor2,
}

impl CriticBatch {
    pub fn rows(&self) -> usize {
        self.lambdas.rows()
    }

    pub fn num_agents(&self) -> usize {
        self.mean_q.len()
    }

    /// The `N` member values of agent `i` for `action` at `row`.
    pub fn member_values(&self, agent: usize, row: usize, action: usize) -> Vec<f64> {
        self.member_q[agent].iter().map(|m| m.get(row, action)).collect()
    }

    pub fn raw_kurtosis(&self, agent: usize, row: usize, action: usize) -> Result<f64> {
        let v = self.member_values(agent, row, action);
        Ok(raw_kurtosis(EnsembleSample::new(&v)?, VAR_EPS))
    }

    pub fn excess_kurtosis(&self, agent: usize, row: usize, action: usize) -> Result<f64> {
        let v = self.member_values(agent, row, action);
        Ok(excess_kurtosis(EnsembleSample::new(&v)?, VAR_EPS))
    }

    fn weight(&self, agent: usize, row: usize, action: usize, weighting: bool, c1: f64) -> Result<f64> {
        if weighting {
            uncertainty_weight(self.raw_kurtosis(agent, row, action)?, c1)
        } else {
            Ok(1.0)
        }
    }

    /// Full decomposition at `row` for the joint action `actions`.
    pub fn mix_at(&self, row: usize, actions: &[usize], weighting: bool, c1: f64) -> Result<QtotEval> {
        let q: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| self.mean_q[i].get(row, a)).collect();
        let kap = if weighting {
            actions.iter().enumerate().map(|(i, &a)| self.raw_kurtosis(i, row, a)).collect::<Result<Vec<_>>>()?
        } else {
            vec![0.0; actions.len()]
        };
        mix(self.lambdas.row(row), self.bias.get(row, 0), &q, &kap, weighting, c1)
    }

    /// Unweighted `Σ λ_i Q_i + b`.
    pub fn q_tot(&self, row: usize, actions: &[usize]) -> f64 {
        actions.iter().enumerate().map(|(i, &a)| self.lambdas.get(row, i) * self.mean_q[i].get(row, a)).sum::<f64>()
            + self.bias.get(row, 0)
    }

    /// Unweighted joint value at `row` for every action of `agent`, with the
    /// other agents fixed at `actions`.
    pub fn q_tot_over_agent_actions(&self, row: usize, agent: usize, actions: &[usize]) -> Vec<f64> {
        let rest = self.q_tot(row, actions) - self.lambdas.get(row, agent) * self.mean_q[agent].get(row, actions[agent]);
        let l = self.lambdas.get(row, agent);
        self.mean_q[agent].row(row).iter().map(|&q| rest + l * q).collect()
    }

    /// `Σ_i Σ_a π_i(a) k_i(a) λ_i Q_i(a) + b`: the exact expectation of the
    /// joint value under a product policy, which factorizes per agent.
    pub fn expected_q_tot(&self, row: usize, probs: &[&[f64]], weighting: bool, c1: f64) -> Result<f64> {
        if probs.len() != self.num_agents() {
            return Err(Error::Shape { op: "expected_q_tot", detail: format!("{} policies", probs.len()) });
        }
        let mut total = self.bias.get(row, 0);
        for (i, p) in probs.iter().enumerate() {
            let q = self.mean_q[i].row(row);
            if p.len() != q.len() {
                return Err(Error::Shape { op: "expected_q_tot", detail: format!("agent {i}: {} probabilities", p.len()) });
            }
            let l = self.lambdas.get(row, i);
            for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
                total += pa * self.weight(i, row, a, weighting, c1)? * l * qa;
            }
        }
        Ok(total)
    }
}

/// Bit-copies every live parameter into the target store.
pub fn sync_targets(live: &ParamStore, target: &mut ParamStore) -> Result<()> {
    if live.len() != target.len() {
        return Err(Error::Shape { op: "sync_targets", detail: format!("{} live vs {} target tensors", live.len(), target.len()) });
    }
    target.copy_values_from(live, "")
}
