use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::diffcore::Tensor2;
use crate::error::{invalid, Error, Result};

/// Tolerance on transition-row and policy-row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A small cooperative MDP over joint actions, fully observed by every agent.
///
/// Joint actions are indexed in mixed radix with agent 0 most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDecMDP {
    action_counts: Vec<usize>,
    /// `[s][joint][s']`.
    transitions: Vec<Vec<Vec<f64>>>,
    /// `[s][joint]`.
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    initial: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(invalid(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl TabularDecMDP {
    pub const MAX_STATES: usize = 200;

    pub fn new(
        action_counts: Vec<usize>,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let s = initial.len();
        if s == 0 || s > Self::MAX_STATES {
            return Err(invalid(format!("{s} states outside 1..={}", Self::MAX_STATES)));
        }
        if action_counts.is_empty() || action_counts.contains(&0) {
            return Err(invalid("every agent needs at least one action"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid(format!("gamma = {gamma} outside [0,1)")));
        }
        let j: usize = action_counts.iter().product();
        if transitions.len() != s || rewards.len() != s {
            return Err(invalid("transition and reward tables need one entry per state"));
        }
        for (x, (rows, r)) in transitions.iter().zip(&rewards).enumerate() {
            if rows.len() != j || r.len() != j {
                return Err(invalid(format!("state {x}: expected {j} joint actions")));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("state {x}: non-finite reward")));
            }
            for row in rows {
                if row.len() != s {
                    return Err(invalid(format!("state {x}: transition row of length {}", row.len())));
                }
                check_distribution(row, "transition row")?;
            }
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(Self { action_counts, transitions, rewards, gamma, initial })
    }

    /// Random dense instance with rewards in [-1, 1].
    pub fn random(rng: &mut impl Rng, num_states: usize, action_counts: Vec<usize>, gamma: f64) -> Result<Self> {
        let j: usize = action_counts.iter().product();
        let mut dist = |n: usize| {
            // Exponential weights give a uniform draw on the simplex.
            let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let transitions: Vec<Vec<Vec<f64>>> = (0..num_states).map(|_| (0..j).map(|_| dist(num_states)).collect()).collect();
        let initial = dist(num_states);
        let rewards = (0..num_states).map(|_| (0..j).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
        Self::new(action_counts, transitions, rewards, gamma, initial)
    }

    pub fn num_states(&self) -> usize {
        self.initial.len()
    }

    pub fn num_agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn num_joint(&self) -> usize {
        self.action_counts.iter().product()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, joint: usize) -> f64 {
        self.rewards[s][joint]
    }

    pub fn transition(&self, s: usize, joint: usize) -> &[f64] {
        &self.transitions[s][joint]
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().zip(&self.action_counts).fold(0, |j, (&a, &m)| j * m + a)
    }

    pub fn joint_actions(&self, mut joint: usize) -> Vec<usize> {
        let mut out = vec![0; self.num_agents()];
        for (i, &m) in self.action_counts.iter().enumerate().rev() {
            out[i] = joint % m;
            joint /= m;
        }
        out
    }

    /// Checks one `S x M_i` table per agent, rows on the simplex.
    pub fn check_policy(&self, policy: &[Tensor2]) -> Result<()> {
        if policy.len() != self.num_agents() {
            return Err(invalid(format!("{} policy tables for {} agents", policy.len(), self.num_agents())));
        }
        for (i, p) in policy.iter().enumerate() {
            if p.shape() != (self.num_states(), self.action_counts[i]) {
                return Err(Error::Shape { op: "policy table", detail: format!("agent {i}: {:?}", p.shape()) });
            }
            for s in 0..self.num_states() {
                check_distribution(p.row(s), "policy row")?;
            }
        }
        Ok(())
    }

    /// `Π_i π_i(a_i|s)`.
    pub fn joint_prob(&self, policy: &[Tensor2], s: usize, joint: usize) -> f64 {
        self.joint_actions(joint).iter().enumerate().map(|(i, &a)| policy[i].get(s, a)).product()
    }

    /// State-to-state matrix and expected reward under `policy`.
    fn induced(&self, policy: &[Tensor2]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_states();
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            for j in 0..self.num_joint() {
                let w = self.joint_prob(policy, s, j);
                r[s] += w * self.rewards[s][j];
                for (t, &q) in self.transitions[s][j].iter().enumerate() {
                    p[(s, t)] += w * q;
                }
            }
        }
        (p, r)
    }
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let x = a.lu().solve(&b).ok_or(Error::Singular)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular)
    }
}

fn state_values(mdp: &TabularDecMDP, policy: &[Tensor2]) -> Result<DVector<f64>> {
    mdp.check_policy(policy)?;
    let n = mdp.num_states();
    let (p, r) = mdp.induced(policy);
    solve(DMatrix::identity(n, n) - p * mdp.gamma, r)
}

/// `Q^π_tot(s, joint)` from an exact solve of the evaluation equations.
pub fn exact_q_tot(mdp: &TabularDecMDP, policy: &[Tensor2]) -> Result<Tensor2> {
    let v = state_values(mdp, policy)?;
    let mut q = Tensor2::zeros(mdp.num_states(), mdp.num_joint());
    for s in 0..mdp.num_states() {
        for j in 0..mdp.num_joint() {
            let next: f64 = mdp.transitions[s][j].iter().zip(v.iter()).map(|(p, v)| p * v).sum();
            q.set(s, j, mdp.rewards[s][j] + mdp.gamma * next);
        }
    }
    Ok(q)
}

/// `J(π) = Σ_s ρ_0(s) V^π(s)`.
pub fn objective(mdp: &TabularDecMDP, policy: &[Tensor2]) -> Result<f64> {
    let v = state_values(mdp, policy)?;
    Ok(mdp.initial.iter().zip(v.iter()).map(|(p, v)| p * v).sum())
}

/// `ρ^π(s) = Σ_t γ^t ρ_t^π(s)`, solved from `(I − γ P_π^T) ρ = ρ_0`.
pub fn discounted_distribution(mdp: &TabularDecMDP, policy: &[Tensor2]) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let n = mdp.num_states();
    let (p, _) = mdp.induced(policy);
    let rho = solve(DMatrix::identity(n, n) - p.transpose() * mdp.gamma, DVector::from_column_slice(&mdp.initial))?;
    Ok(rho.iter().copied().collect())
}

/// `ρ_t^π` for `t = 0..=t_max`.
pub fn state_distributions(mdp: &TabularDecMDP, policy: &[Tensor2], t_max: usize) -> Result<Vec<Vec<f64>>> {
    mdp.check_policy(policy)?;
    let (p, _) = mdp.induced(policy);
    let mut cur = DVector::from_column_slice(&mdp.initial);
    let mut out = vec![cur.iter().copied().collect::<Vec<_>>()];
    let pt = p.transpose();
    for _ in 0..t_max {
        cur = &pt * cur;
        out.push(cur.iter().copied().collect());
    }
    Ok(out)
}

/// `Q^π_i(s, a_i) = Σ_{a_{-i}} π_{-i}(a_{-i}|s) Q^π_tot(s, (a_i, a_{-i}))`.
pub fn exact_q_i(mdp: &TabularDecMDP, eval: &ExactPolicyEval, agent: usize) -> Tensor2 {
    let mut q = Tensor2::zeros(mdp.num_states(), mdp.action_counts[agent]);
    for s in 0..mdp.num_states() {
        for j in 0..mdp.num_joint() {
            let acts = mdp.joint_actions(j);
            let w: f64 = acts.iter().enumerate().filter(|&(k, _)| k != agent).map(|(k, &a)| eval.policy[k].get(s, a)).product();
            let a = acts[agent];
            q.set(s, a, q.get(s, a) + w * eval.q_tot.get(s, j));
        }
    }
    q
}

/// Everything exact about one joint policy.
#[derive(Clone, Debug)]
pub struct ExactPolicyEval {
    /// `[agent]`, each `S x M_i`.
    pub policy: Vec<Tensor2>,
    /// `S x Π M_i`.
    pub q_tot: Tensor2,
    /// `[agent]`, each `S x M_i`.
    pub q_i: Vec<Tensor2>,
    pub rho: Vec<f64>,
}

impl ExactPolicyEval {
    pub fn new(mdp: &TabularDecMDP, policy: Vec<Tensor2>) -> Result<Self> {
        let q_tot = exact_q_tot(mdp, &policy)?;
        let rho = discounted_distribution(mdp, &policy)?;
        let mut eval = Self { policy, q_tot, q_i: Vec::new(), rho };
        eval.q_i = (0..mdp.num_agents()).map(|i| exact_q_i(mdp, &eval, i)).collect();
        Ok(eval)
    }

    /// Largest `|Q(s,a) − r(s,a) − γ Σ P(s'|s,a) Σ π(a'|s') Q(s',a')|`.
    pub fn bellman_residual(&self, mdp: &TabularDecMDP) -> f64 {
        let v: Vec<f64> = (0..mdp.num_states())
            .map(|s| (0..mdp.num_joint()).map(|j| mdp.joint_prob(&self.policy, s, j) * self.q_tot.get(s, j)).sum())
            .collect();
        let mut worst = 0.0f64;
        for s in 0..mdp.num_states() {
            for j in 0..mdp.num_joint() {
                let next: f64 = mdp.transition(s, j).iter().zip(&v).map(|(p, v)| p * v).sum();
                worst = worst.max((self.q_tot.get(s, j) - mdp.reward(s, j) - mdp.gamma() * next).abs());
            }
        }
        worst
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&p, &q)| {
            if p == 0.0 {
                0.0
            } else if q == 0.0 {
                f64::INFINITY
            } else {
                p * (p / q).ln()
            }
        })
        .sum()
}

/// `KL(π(·|s) ‖ β(·|s))` of the joint product policies, as the per-agent sum.
pub fn kl_at_state(pi: &[Tensor2], beta: &[Tensor2], s: usize) -> f64 {
    pi.iter().zip(beta).map(|(p, b)| kl(p.row(s), b.row(s))).sum()
}

/// The same divergence by enumerating joint actions.
pub fn joint_kl_enumerated(mdp: &TabularDecMDP, pi: &[Tensor2], beta: &[Tensor2], s: usize) -> f64 {
    let p: Vec<f64> = (0..mdp.num_joint()).map(|j| mdp.joint_prob(pi, s, j)).collect();
    let q: Vec<f64> = (0..mdp.num_joint()).map(|j| mdp.joint_prob(beta, s, j)).collect();
    kl(&p, &q)
}

/// Largest per-state joint KL divergence. Infinite when `β` misses an action
/// `π` can take.
pub fn max_kl(pi: &[Tensor2], beta: &[Tensor2]) -> Result<f64> {
    if pi.len() != beta.len() || pi.iter().zip(beta).any(|(p, b)| p.shape() != b.shape()) {
        return Err(Error::Shape { op: "max_kl", detail: "policy tables differ in shape".into() });
    }
    let states = pi.first().map_or(0, Tensor2::rows);
    Ok((0..states).map(|s| kl_at_state(pi, beta, s)).fold(0.0, f64::max))
}
