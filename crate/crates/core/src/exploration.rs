//! Kurtosis-gated action selection with logit bonuses, the variance-bonus
//! ablation arm and plain softmax execution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actors::PolicyNet;
use crate::critics::EnsembleCritic;
use crate::diffcore::{softmax, ParamStore, Tensor2};
use crate::error::{invalid, Error, Result};
use crate::stats::{excess_kurtosis, EnsembleSample, VAR_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExploreMode {
    /// Excess-kurtosis bonus, only where the mean excess kurtosis is positive.
    KurtosisGated,
    /// Ensemble-variance bonus at every decision.
    VarianceAlways,
    None,
}

/// Linear decay from `start` to `end` over `decay_steps`, constant after.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, step: usize) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) {
            return Err(invalid(format!("epsilon schedule {} -> {} leaves [0,1]", self.start, self.end)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub bonus_beta: f64,
    pub mode: ExploreMode,
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bonus_beta >= 0.0) || !self.bonus_beta.is_finite() {
            return Err(invalid(format!("bonus scale {} must be finite and nonnegative", self.bonus_beta)));
        }
        Ok(())
    }
}

/// Transposes `N` member rows of `M` values into per-action samples.
fn per_action<T>(members: &[Vec<f64>], f: impl Fn(EnsembleSample<'_>) -> T) -> Result<Vec<T>> {
    let m = members.first().map_or(0, Vec::len);
    if members.iter().any(|r| r.len() != m) {
        return Err(Error::Shape { op: "per_action", detail: "members disagree on the action count".into() });
    }
    (0..m)
        .map(|a| {
            let v: Vec<f64> = members.iter().map(|r| r[a]).collect();
            Ok(f(EnsembleSample::new(&v)?))
        })
        .collect()
}

/// Excess kurtosis of the member values of each action; `members` is
/// `N x M`.
pub fn per_action_excess_kurtosis(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    per_action(members, |s| excess_kurtosis(s, VAR_EPS))
}

/// Population variance of the member values of each action.
pub fn per_action_variance(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    per_action(members, |s| s.variance())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn member_rows(critic: &EnsembleCritic, store: &ParamStore, window: &[f64]) -> Result<Vec<Vec<f64>>> {
    let x = Tensor2::row_vector(window);
    Ok(critic.all_member_q(store, &x)?.into_iter().map(Tensor2::into_data).collect())
}

/// `ḡ_i`: mean over actions of the ensemble's excess kurtosis at `window`.
pub fn mean_excess_kurtosis(critic: &EnsembleCritic, store: &ParamStore, window: &[f64]) -> Result<f64> {
    Ok(mean(&per_action_excess_kurtosis(&member_rows(critic, store, window)?)?))
}

fn check_len(logits: &[f64], bonus: &[f64]) -> Result<()> {
    if logits.len() != bonus.len() {
        return Err(Error::Shape { op: "bonus logits", detail: format!("{} logits, {} bonuses", logits.len(), bonus.len()) });
    }
    Ok(())
}

/// `z_j + β κ_j` when `gbar > 0`, the logits unchanged otherwise.
pub fn weighted_logits(logits: &[f64], kurtoses: &[f64], gbar: f64, beta: f64) -> Result<Vec<f64>> {
    check_len(logits, kurtoses)?;
    if gbar > 0.0 {
        Ok(logits.iter().zip(kurtoses).map(|(z, k)| z + beta * k).collect())
    } else {
        Ok(logits.to_vec())
    }
}

/// `z_j + β var_j`, unconditionally.
pub fn variance_bonus_logits(logits: &[f64], variances: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_len(logits, variances)?;
    Ok(logits.iter().zip(variances).map(|(z, v)| z + beta * v).collect())
}

/// Behavior distribution at one decision point.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorDist {
    /// `ε/M + (1−ε)·softmax(z̃)`.
    pub probs: Vec<f64>,
    pub gbar: f64,
    pub gate_open: bool,
}

/// Mixture distribution from actor logits and the `N x M` member values.
pub fn behavior_distribution(logits: &[f64], members: &[Vec<f64>], cfg: &ExploreConfig, eps: f64) -> Result<BehaviorDist> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(invalid(format!("epsilon {eps} outside [0,1]")));
    }
    let kurt = per_action_excess_kurtosis(members)?;
    let gbar = mean(&kurt);
    let (z, gate_open) = match cfg.mode {
        ExploreMode::KurtosisGated => (weighted_logits(logits, &kurt, gbar, cfg.bonus_beta)?, gbar > 0.0),
        ExploreMode::VarianceAlways => (variance_bonus_logits(logits, &per_action_variance(members)?, cfg.bonus_beta)?, true),
        ExploreMode::None => (logits.to_vec(), false),
    };
    let m = z.len() as f64;
    let probs = softmax(&z).into_iter().map(|p| eps / m + (1.0 - eps) * p).collect();
    Ok(BehaviorDist { probs, gbar, gate_open })
}

/// Inverse-CDF draw from `probs`.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass; take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// An exploratory decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub action: usize,
    /// Probability of `action` under the behavior distribution.
    pub prob: f64,
    pub dist: BehaviorDist,
}

/// Draws an action from the ε-mixture over the (bonus-adjusted) softmax.
#[allow(clippy::too_many_arguments)]
pub fn select_action(
    actor: &PolicyNet,
    actor_store: &ParamStore,
    critic: &EnsembleCritic,
    critic_store: &ParamStore,
    window: &[f64],
    cfg: &ExploreConfig,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<Selection> {
    let z = actor.logits(actor_store, &Tensor2::row_vector(window))?;
    let members = member_rows(critic, critic_store, window)?;
    let dist = behavior_distribution(z.row(0), &members, cfg, eps)?;
    let action = sample_index(&dist.probs, rng);
    Ok(Selection { action, prob: dist.probs[action], dist })
}

/// Decentralized execution: a draw from the plain softmax policy.
pub fn eval_action(actor: &PolicyNet, store: &ParamStore, window: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let p = actor.policy(store, window)?;
    Ok(sample_index(p.probs(), rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const GATED: ExploreConfig = ExploreConfig { bonus_beta: 0.001, mode: ExploreMode::KurtosisGated };

    #[test]
    fn epsilon_schedule() {
        let s = EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 100 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-15);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(10_000), 0.05);
        assert_eq!(EpsilonSchedule { start: 1.0, end: 0.1, decay_steps: 0 }.value(0), 0.1);
    }

    #[test]
    fn mean_excess_kurtosis_cases() {
        // two actions, both with member values {1,2,3,4}
        let members: Vec<Vec<f64>> = (1..=4).map(|v| vec![v as f64, v as f64 * 10.0]).collect();
        let k = per_action_excess_kurtosis(&members).unwrap();
        assert!((k[0] + 1.36).abs() < 1e-12 && (k[1] + 1.36).abs() < 1e-12);
        assert!((mean(&k) + 1.36).abs() < 1e-12);
        let flat = vec![vec![2.0, 3.0]; 5];
        assert_eq!(mean(&per_action_excess_kurtosis(&flat).unwrap()), 0.0);
    }

    #[test]
    fn logit_bonus_examples() {
        assert_eq!(weighted_logits(&[0.3, 0.1], &[5.0, 1.0], 1.0, 0.0).unwrap(), vec![0.3, 0.1]);
        assert_eq!(weighted_logits(&[0.3, 0.1], &[5.0, 1.0], 0.0, 0.5).unwrap(), vec![0.3, 0.1]);
        assert_eq!(weighted_logits(&[0.3, 0.1], &[5.0, 1.0], -2.0, 0.5).unwrap(), vec![0.3, 0.1]);
        let z = weighted_logits(&[0.0, 0.0], &[5.0, 0.0], 2.5, 0.001).unwrap();
        assert!((z[0] - 0.005).abs() < 1e-18 && z[1] == 0.0);
        assert!(weighted_logits(&[0.0], &[1.0, 2.0], 1.0, 0.1).is_err());
        assert_eq!(variance_bonus_logits(&[1.0, 2.0], &[0.0, 0.0], 0.3).unwrap(), vec![1.0, 2.0]);
        let v = variance_bonus_logits(&[1.0, 2.0], &[2.0, 4.0], 0.5).unwrap();
        assert_eq!(v, weighted_logits(&[1.0, 2.0], &[2.0, 4.0], 1.0, 0.5).unwrap());
    }

    #[test]
    fn variance_bonus_ignores_gate() {
        // platykurtic members: gate closed, variance bonus still applies
        let members: Vec<Vec<f64>> = (1..=4).map(|v| vec![v as f64, 0.0]).collect();
        let cfg = ExploreConfig { bonus_beta: 1.0, mode: ExploreMode::VarianceAlways };
        let d = behavior_distribution(&[0.0, 0.0], &members, &cfg, 0.0).unwrap();
        assert!(d.gbar < 0.0);
        assert!(d.probs[0] > d.probs[1]);
        let g = behavior_distribution(&[0.0, 0.0], &members, &ExploreConfig { bonus_beta: 1.0, ..GATED }, 0.0).unwrap();
        assert_eq!(g.probs, vec![0.5, 0.5]);
        assert!(!g.gate_open);
    }

    #[test]
    fn bonus_monotone_in_kurtosis() {
        let logits = [0.2, -0.1, 0.4];
        let mut prev = 0.0;
        for k0 in [0.5, 1.0, 2.0, 4.0] {
            let z = weighted_logits(&logits, &[k0, 0.3, 0.1], 1.0, 0.1).unwrap();
            let p = softmax(&z)[0];
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let members = vec![vec![0.0, 1.0, 7.0]; 3];
        let d = behavior_distribution(&[5.0, -3.0, 0.0], &members, &GATED, 1.0).unwrap();
        assert!(d.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn mixture_probabilities_match_frequencies() {
        let members: Vec<Vec<f64>> = vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.1], vec![0.0, 0.0, 0.2], vec![0.0, 0.0, 9.0], vec![0.0, 0.0, 0.3]];
        let cfg = ExploreConfig { bonus_beta: 0.2, mode: ExploreMode::KurtosisGated };
        let logits = [0.5, 0.0, -0.5];
        let eps = 0.3;
        let d = behavior_distribution(&logits, &members, &cfg, eps).unwrap();
        assert!(d.gate_open);
        let kurt = per_action_excess_kurtosis(&members).unwrap();
        let z = weighted_logits(&logits, &kurt, d.gbar, 0.2).unwrap();
        let sm = softmax(&z);
        for a in 0..3 {
            assert!((d.probs[a] - (eps / 3.0 + (1.0 - eps) * sm[a])).abs() < 1e-15);
        }
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_index(&d.probs, &mut rng)] += 1;
        }
        for a in 0..3 {
            let p = d.probs[a];
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[a] as f64 - n as f64 * p).abs() < 3.0 * sd, "action {a}");
        }
    }

    #[test]
    fn eval_action_frequencies() {
        let net = PolicyNet::new(0, 1, 2, 4);
        let mut s = ParamStore::new();
        net.mlp().zero(&mut s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let ones = (0..n).filter(|_| eval_action(&net, &s, &[0.0], &mut rng).unwrap() == 1).count();
        let sd = (n as f64 * 0.25).sqrt();
        assert!((ones as f64 - n as f64 / 2.0).abs() < 3.0 * sd);
        // peaked logits (10, 0) through the output bias
        s.insert("actor0.l2.b", Tensor2::row_vector(&[10.0, 0.0])).unwrap();
        let p0 = 10f64.exp() / (10f64.exp() + 1.0);
        let zeros = (0..n).filter(|_| eval_action(&net, &s, &[0.0], &mut rng).unwrap() == 0).count();
        let sd = (n as f64 * p0 * (1.0 - p0)).sqrt();
        assert!((zeros as f64 - n as f64 * p0).abs() < 3.0 * sd.max(1.0));
    }
}
