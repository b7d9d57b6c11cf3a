use super::mdp::{discounted_distribution, max_kl, state_distributions, ExactPolicyEval, TabularDecMDP};
use crate::actors::{advantage, off_policy_grad, on_policy_grad, ActorSet, OffPolicyBatch, OnPolicyBatch};
use crate::critics::{CentralCritic, CriticBatch};
use crate::diffcore::{ParamStore, Tensor2};
use crate::error::{Error, Result};

/// Slack allowed when comparing the two sides of the bound.
pub const BOUND_TOL: f64 = 1e-9;

/// `π_i(·|s)` for every enumerated state, one table per agent.
pub fn policy_tables(actors: &ActorSet, features: &Tensor2) -> Result<Vec<Tensor2>> {
    (0..actors.len()).map(|i| actors.net(i).probs(actors.store(i), features)).collect()
}

/// Ensemble means, mixing coefficients and bias at every enumerated state.
/// Features serve both as each agent's window and as the global state.
pub fn critic_tables(critic: &CentralCritic, store: &ParamStore, features: &Tensor2) -> Result<CriticBatch> {
    let windows = vec![features.clone(); critic.num_agents()];
    critic.evaluate(store, &windows, features)
}

fn check_agent(actors: &ActorSet, features: &Tensor2, agent: usize) -> Result<()> {
    if agent >= actors.len() {
        return Err(Error::InvalidArgument(format!("agent {agent} of {}", actors.len())));
    }
    if features.rows() == 0 {
        return Err(Error::InvalidArgument("no states".into()));
    }
    Ok(())
}

/// `∇_θ log π_i(a|s)` flattened in parameter-name order, as `[s][a]`.
pub fn score_vectors(actors: &ActorSet, features: &Tensor2, agent: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    check_agent(actors, features, agent)?;
    let (net, store) = (actors.net(agent), actors.store(agent));
    (0..features.rows())
        .map(|s| {
            let x = Tensor2::row_vector(features.row(s));
            (0..net.num_actions())
                .map(|a| {
                    let batch = OnPolicyBatch { windows: x.clone(), actions: vec![a], advantages: vec![1.0] };
                    Ok(on_policy_grad(net, store, &batch)?.flatten(store))
                })
                .collect()
        })
        .collect()
}

/// `Σ_{s,a} w(s,a) ∇_θ log π_i(a|s)` for an `S x M_i` weight table.
fn weighted_score(actors: &ActorSet, features: &Tensor2, agent: usize, w: &Tensor2) -> Result<Vec<f64>> {
    let (net, store) = (actors.net(agent), actors.store(agent));
    let (s_count, m) = w.shape();
    let mut rows = Vec::with_capacity(s_count * m);
    let mut actions = Vec::with_capacity(s_count * m);
    for s in 0..s_count {
        for a in 0..m {
            rows.push(features.row(s));
            actions.push(a);
        }
    }
    let batch = OnPolicyBatch { windows: Tensor2::from_rows(&rows)?, actions, advantages: w.data().to_vec() };
    // The batch objective is a mean over rows.
    Ok(scale(on_policy_grad(net, store, &batch)?.flatten(store), (s_count * m) as f64))
}

fn scale(mut v: Vec<f64>, k: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= k);
    v
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `∇_θ J = Σ_s ρ^π(s) Σ_a π_i(a|s) ∇ log π_i(a|s) Q^π_i(s,a)`.
pub fn exact_true_grad(eval: &ExactPolicyEval, actors: &ActorSet, features: &Tensor2, agent: usize) -> Result<Vec<f64>> {
    check_agent(actors, features, agent)?;
    let pi = &eval.policy[agent];
    let w = Tensor2::new(
        pi.rows(),
        pi.cols(),
        (0..pi.rows())
            .flat_map(|s| (0..pi.cols()).map(move |a| (s, a)))
            .map(|(s, a)| eval.rho[s] * pi.get(s, a) * eval.q_i[agent].get(s, a))
            .collect(),
    )?;
    weighted_score(actors, features, agent, &w)
}

/// The two arms of the mixed actor gradient under exact expectations, and
/// their `ν`-blend.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedGrad {
    pub on: Vec<f64>,
    pub off: Vec<f64>,
    pub total: Vec<f64>,
}

/// On arm: `Σ_s ρ^π Σ_a π_i ∇ log π_i U_i`. Off arm:
/// `Σ_s ρ^β Σ_{a_-i} β_{-i} ∇ Σ_a π_i(a) Q_tot(s, (a, a_-i))`.
#[allow(clippy::too_many_arguments)]
pub fn exact_mixed_grad(
    mdp: &TabularDecMDP,
    eval: &ExactPolicyEval,
    actors: &ActorSet,
    features: &Tensor2,
    critic: &CriticBatch,
    beta: &[Tensor2],
    nu: f64,
    agent: usize,
) -> Result<MixedGrad> {
    check_agent(actors, features, agent)?;
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::InvalidArgument(format!("nu = {nu} outside [0,1]")));
    }
    let pi = &eval.policy[agent];
    let (n, m) = pi.shape();
    let mut w = Tensor2::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let u = advantage(critic.mean_q[agent].row(s), pi.row(s), critic.lambdas.get(s, agent), a)?.value;
            w.set(s, a, eval.rho[s] * pi.get(s, a) * u);
        }
    }
    let on = weighted_score(actors, features, agent, &w)?;

    let rho_b = discounted_distribution(mdp, beta)?;
    let mut q = Tensor2::zeros(n, m);
    for s in 0..n {
        for j in 0..mdp.num_joint() {
            let acts = mdp.joint_actions(j);
            let w_rest: f64 = acts.iter().enumerate().filter(|&(k, _)| k != agent).map(|(k, &a)| beta[k].get(s, a)).product();
            let a = acts[agent];
            q.set(s, a, q.get(s, a) + rho_b[s] * w_rest * critic.q_tot(s, &acts));
        }
    }
    let batch = OffPolicyBatch { windows: features.clone(), q_values: q };
    let store = actors.store(agent);
    let off = scale(off_policy_grad(actors.net(agent), store, &batch)?.flatten(store), n as f64);
    let total = on.iter().zip(&off).map(|(a, b)| (1.0 - nu) * a + nu * b).collect();
    Ok(MixedGrad { on, off, total })
}

/// Both sides of the bias bound for one agent.
///
/// `omega1` reads the first constant as the maximum of
/// `‖∇ log π_i · (Q^π_i − λ_i Q_i)‖₁`, the quantity the proof bounds.
/// `omega1_printed` keeps the additional `λ_i` factor of the statement;
/// `rhs_printed` and `holds_printed` use it.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub agent: usize,
    pub nu: f64,
    pub gamma: f64,
    pub omega1: f64,
    pub omega1_printed: f64,
    pub omega2: f64,
    pub d_max_kl: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rhs_printed: f64,
    pub holds: bool,
    pub holds_printed: bool,
}

/// Computes the exact bias `‖∇J − D^β_ν‖₁` and the bound. An infinite KL
/// divergence makes the bound vacuous (`rhs = ∞`) rather than an error.
#[allow(clippy::too_many_arguments)]
pub fn certify_bound(
    mdp: &TabularDecMDP,
    eval: &ExactPolicyEval,
    actors: &ActorSet,
    features: &Tensor2,
    critic: &CriticBatch,
    beta: &[Tensor2],
    nu: f64,
    agent: usize,
) -> Result<BoundReport> {
    let truth = exact_true_grad(eval, actors, features, agent)?;
    let mixed = exact_mixed_grad(mdp, eval, actors, features, critic, beta, nu, agent)?;
    let lhs: f64 = truth.iter().zip(&mixed.total).map(|(a, b)| (a - b).abs()).sum();

    let scores = score_vectors(actors, features, agent)?;
    let pi = &eval.policy[agent];
    let (mut omega1, mut omega1_printed, mut omega2) = (0.0f64, 0.0f64, 0.0f64);
    for (s, per_action) in scores.iter().enumerate() {
        let lam = critic.lambdas.get(s, agent);
        let mut v = vec![0.0; per_action[0].len()];
        for (a, g) in per_action.iter().enumerate() {
            let q_phi = critic.mean_q[agent].get(s, a);
            let gap = eval.q_i[agent].get(s, a) - lam * q_phi;
            let norm = l1(g);
            omega1 = omega1.max(norm * gap.abs());
            omega1_printed = omega1_printed.max(norm * (lam * gap).abs());
            // ∇π = π ∇log π.
            let c = pi.get(s, a) * lam * q_phi;
            v.iter_mut().zip(g).for_each(|(x, g)| *x += c * g);
        }
        omega2 = omega2.max(l1(&v));
    }

    let gamma = mdp.gamma();
    let d_max_kl = max_kl(&eval.policy, beta)?;
    let kl_term = if nu == 0.0 || omega2 == 0.0 {
        0.0
    } else {
        2.0 * omega2 * nu * gamma / (1.0 - gamma).powi(2) * d_max_kl.sqrt()
    };
    let rhs = omega1 / (1.0 - gamma) + kl_term;
    let rhs_printed = omega1_printed / (1.0 - gamma) + kl_term;
    Ok(BoundReport {
        agent,
        nu,
        gamma,
        omega1,
        omega1_printed,
        omega2,
        d_max_kl,
        lhs,
        rhs,
        rhs_printed,
        holds: lhs <= rhs + BOUND_TOL,
        holds_printed: lhs <= rhs_printed + BOUND_TOL,
    })
}

/// `max_{t ≤ t_max} (‖ρ_t^π − ρ_t^β‖₁ − 2t √D_max)`; never positive when the
/// distribution-shift lemma holds.
pub fn lemma1_check(mdp: &TabularDecMDP, pi: &[Tensor2], beta: &[Tensor2], t_max: usize) -> Result<f64> {
    let d = max_kl(pi, beta)?;
    let rp = state_distributions(mdp, pi, t_max)?;
    let rb = state_distributions(mdp, beta, t_max)?;
    let mut worst = f64::NEG_INFINITY;
    for (t, (a, b)) in rp.iter().zip(&rb).enumerate() {
        let gap: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        let bound = if t == 0 { 0.0 } else { 2.0 * t as f64 * d.sqrt() };
        worst = worst.max(gap - bound);
    }
    Ok(worst)
}
