use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bound::{certify_bound, critic_tables, lemma1_check, policy_tables, BoundReport};
use super::mdp::{ExactPolicyEval, TabularDecMDP};
use crate::actors::ActorSet;
use crate::critics::CentralCritic;
use crate::diffcore::{softmax, ParamStore, Tensor2};
use crate::envs::EnvSpec;
use crate::error::Result;

/// Identity rows: each state observed as its one-hot code.
pub fn one_hot_features(states: usize) -> Tensor2 {
    let mut x = Tensor2::zeros(states, states);
    for s in 0..states {
        x.set(s, s, 1.0);
    }
    x
}

/// A random MDP with random actors, critics, behavior policy and `ν`.
#[derive(Clone, Debug)]
pub struct OracleInstance {
    pub mdp: TabularDecMDP,
    pub features: Tensor2,
    pub actors: ActorSet,
    pub critic: CentralCritic,
    pub critic_store: ParamStore,
    pub beta: Vec<Tensor2>,
    pub nu: f64,
}

const HIDDEN: usize = 8;
const ENSEMBLE: usize = 3;

impl OracleInstance {
    /// Two agents, 2 to `max_states` states, 2 or 3 actions each.
    pub fn random(rng: &mut impl Rng, max_states: usize) -> Result<Self> {
        let states = rng.random_range(2..=max_states.max(2));
        let counts = vec![rng.random_range(2..=3), rng.random_range(2..=3)];
        let gamma = rng.random_range(0.5..0.95);
        let mdp = TabularDecMDP::random(rng, states, counts.clone(), gamma)?;
        let features = one_hot_features(states);
        let actors = ActorSet::new(&[states, states], &counts, HIDDEN, rng)?;
        let spec = EnvSpec { num_agents: 2, action_counts: counts.clone(), obs_dim: states, state_dim: states, max_steps: 1, gamma };
        let critic = CentralCritic::new(&spec, 1, ENSEMBLE, HIDDEN, HIDDEN);
        let mut critic_store = ParamStore::new();
        critic.init(&mut critic_store, rng)?;
        let beta = counts
            .iter()
            .map(|&m| {
                let rows: Vec<Vec<f64>> =
                    (0..states).map(|_| softmax(&(0..m).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>())).collect();
                Tensor2::from_rows(&rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let nu = rng.random_range(0.0..=1.0);
        Ok(Self { mdp, features, actors, critic, critic_store, beta, nu })
    }

    pub fn evaluate(&self) -> Result<ExactPolicyEval> {
        ExactPolicyEval::new(&self.mdp, policy_tables(&self.actors, &self.features)?)
    }

    pub fn certify(&self, agent: usize) -> Result<BoundReport> {
        let eval = self.evaluate()?;
        let tables = critic_tables(&self.critic, &self.critic_store, &self.features)?;
        certify_bound(&self.mdp, &eval, &self.actors, &self.features, &tables, &self.beta, self.nu, agent)
    }
}

/// One agent of one sweep instance.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub instance: usize,
    pub states: usize,
    pub report: BoundReport,
    /// [`lemma1_check`] of the instance (shared by its agents).
    pub lemma1: f64,
}

/// Checks the bound for every agent of `instances` random instances.
pub fn certification_sweep(instances: usize, seed: u64, max_states: usize, t_max: usize) -> Result<Vec<SweepRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for k in 0..instances {
        let inst = OracleInstance::random(&mut rng, max_states)?;
        let eval = inst.evaluate()?;
        let tables = critic_tables(&inst.critic, &inst.critic_store, &inst.features)?;
        let lemma1 = lemma1_check(&inst.mdp, &eval.policy, &inst.beta, t_max)?;
        for agent in 0..inst.mdp.num_agents() {
            let report = certify_bound(&inst.mdp, &eval, &inst.actors, &inst.features, &tables, &inst.beta, inst.nu, agent)?;
            rows.push(SweepRow { instance: k, states: inst.mdp.num_states(), report, lemma1 });
        }
    }
    Ok(rows)
}
