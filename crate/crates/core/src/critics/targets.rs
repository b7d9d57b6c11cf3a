use super::central::{CentralCritic, CriticBatch};
use crate::diffcore::{ParamStore, Tensor2};
use crate::error::{invalid, Error, Result};
use crate::replay::Transition;

/// Current per-agent action probabilities, used to re-weight off-policy
/// segments at training time.
pub trait JointPolicy {
    fn num_agents(&self) -> usize;
    /// Row-wise probabilities of agent `agent` for a batch of windows.
    fn probs(&self, agent: usize, windows: &Tensor2) -> Result<Tensor2>;
}

/// Settings shared by both target computations.
#[derive(Clone, Copy, Debug)]
pub struct TargetParams {
    pub lambda: f64,
    pub gamma: f64,
    pub c1: f64,
    /// Kurtosis weighting of next-step joint values.
    pub weighting: bool,
}

impl TargetParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("trace decay {} / discount {} out of range", self.lambda, self.gamma)));
        }
        Ok(())
    }
}

/// Backward TD(λ) recursion over one episode.
///
/// `q_taken[t]` is the current-step joint value, `q_next[t]` the bootstrap
/// value of the following step (0 after termination).
/// `y_t = q_taken[t] + Σ_{l≥t} (γλ)^{l-t} (r_l + γ q_next[l] − q_taken[l])`.
pub fn td_lambda_returns(rewards: &[f64], q_taken: &[f64], q_next: &[f64], lambda: f64, gamma: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n == 0 {
        return Err(invalid("TD(λ) target of an empty episode"));
    }
    if q_taken.len() != n || q_next.len() != n {
        return Err(Error::Shape { op: "td_lambda_returns", detail: format!("{n} rewards, {} / {} values", q_taken.len(), q_next.len()) });
    }
    let mut out = vec![0.0; n];
    let mut g = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * q_next[t] - q_taken[t];
        g = delta + gamma * lambda * g;
        out[t] = q_taken[t] + g;
    }
    Ok(out)
}

/// Tree-backup return of one segment:
/// `y = q_taken[0] + Σ_t (Π_{l≤t} λ p_l) (r_t + γ e_t − q_taken[t])` where
/// `p_l` is the joint probability of the stored action under the current
/// policy and `e_t` the expected next-step joint value (0 after termination).
pub fn tree_backup_return(rewards: &[f64], q_taken: &[f64], expected_next: &[f64], joint_probs: &[f64], lambda: f64, gamma: f64) -> Result<f64> {
    let m = rewards.len();
    if m == 0 {
        return Err(invalid("tree-backup segment must hold at least one step"));
    }
    if q_taken.len() != m || expected_next.len() != m || joint_probs.len() != m {
        return Err(Error::Shape { op: "tree_backup_return", detail: format!("{m} rewards with mismatched inputs") });
    }
    if let Some(p) = joint_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(invalid(format!("joint probability {p} outside (0,1]")));
    }
    let mut y = q_taken[0];
    let mut coef = 1.0;
    for t in 0..m {
        coef *= lambda * joint_probs[t];
        y += coef * (rewards[t] + gamma * expected_next[t] - q_taken[t]);
    }
    Ok(y)
}

fn stack(rows: impl Iterator<Item = Vec<f64>>) -> Result<Tensor2> {
    let rows: Vec<Vec<f64>> = rows.collect();
    Tensor2::from_rows(&rows)
}

fn batch_inputs<'a>(steps: impl Iterator<Item = (&'a [Vec<f64>], &'a [f64])> + Clone, k: usize) -> Result<(Vec<Tensor2>, Tensor2)> {
    let windows = (0..k).map(|i| stack(steps.clone().map(|(w, _)| w[i].clone()))).collect::<Result<Vec<_>>>()?;
    let states = stack(steps.map(|(_, s)| s.to_vec()))?;
    Ok((windows, states))
}

/// TD(λ) targets for every step of a complete episode, evaluated with the
/// target parameters. Current-step values are unweighted; bootstrap values
/// carry the kurtosis weights when `p.weighting` is set.
pub fn td_lambda_target(episode: &[Transition], critic: &CentralCritic, target: &ParamStore, p: &TargetParams) -> Result<Vec<f64>> {
    p.validate()?;
    let n = episode.len();
    if n == 0 {
        return Err(invalid("TD(λ) target of an empty episode"));
    }
    Ok(td_lambda_targets(&[episode], critic, target, p)?.pop().unwrap_or_default())
}

/// [`td_lambda_target`] for several episodes with one critic evaluation.
pub fn td_lambda_targets(episodes: &[&[Transition]], critic: &CentralCritic, target: &ParamStore, p: &TargetParams) -> Result<Vec<Vec<f64>>> {
    p.validate()?;
    if episodes.iter().any(|e| e.is_empty()) {
        return Err(invalid("TD(λ) target of an empty episode"));
    }
    let k = critic.num_agents();
    let steps = episodes.iter().flat_map(|e| e.iter());
    let (windows, states) = batch_inputs(steps.map(|t| (t.windows.as_slice(), t.state.as_slice())), k)?;
    let batch = critic.evaluate(target, &windows, &states)?;
    let mut out = Vec::with_capacity(episodes.len());
    let mut base = 0;
    for episode in episodes {
        let n = episode.len();
        let q_taken: Vec<f64> = episode.iter().enumerate().map(|(t, tr)| batch.q_tot(base + t, &tr.actions)).collect();
        let mut q_next = vec![0.0; n];
        for t in 0..n {
            if episode[t].terminated {
                continue;
            }
            if t + 1 == n {
                return Err(invalid("episode ends without a terminal step"));
            }
            q_next[t] = batch.mix_at(base + t + 1, &episode[t + 1].actions, p.weighting, p.c1)?.total;
        }
        let rewards: Vec<f64> = episode.iter().map(|t| t.reward).collect();
        out.push(td_lambda_returns(&rewards, &q_taken, &q_next, p.lambda, p.gamma)?);
        base += n;
    }
    Ok(out)
}

/// Tree-backup targets, one per segment, evaluated with the target
/// parameters and the current joint policy.
pub fn tree_backup_targets(
    segments: &[&[Transition]],
    critic: &CentralCritic,
    target: &ParamStore,
    policy: &dyn JointPolicy,
    p: &TargetParams,
) -> Result<Vec<f64>> {
    p.validate()?;
    let k = critic.num_agents();
    if policy.num_agents() != k {
        return Err(Error::Shape { op: "tree_backup_targets", detail: format!("policy over {} agents", policy.num_agents()) });
    }
    if segments.iter().any(|s| s.is_empty()) {
        return Err(invalid("tree-backup segment must hold at least one step"));
    }
    // Row layout per segment: its steps, then the successor of its last step
    // unless that step terminated.
    let rows = segments.iter().flat_map(|seg| {
        let last = &seg[seg.len() - 1];
        let tail = (!last.terminated).then_some((last.next_windows.as_slice(), last.next_state.as_slice()));
        seg.iter().map(|t| (t.windows.as_slice(), t.state.as_slice())).chain(tail)
    });
    let (windows, states) = batch_inputs(rows, k)?;
    let batch = critic.evaluate(target, &windows, &states)?;
    let probs = (0..k).map(|i| policy.probs(i, &windows[i])).collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(segments.len());
    let mut base = 0;
    for seg in segments {
        let m = seg.len();
        let mut rewards = Vec::with_capacity(m);
        let mut q_taken = Vec::with_capacity(m);
        let mut expected = Vec::with_capacity(m);
        let mut joint = Vec::with_capacity(m);
        for (t, tr) in seg.iter().enumerate() {
            let row = base + t;
            rewards.push(tr.reward);
            q_taken.push(batch.q_tot(row, &tr.actions));
            joint.push(tr.actions.iter().enumerate().map(|(i, &a)| probs[i].get(row, a)).product());
            expected.push(if tr.terminated { 0.0 } else { expected_at(&batch, &probs, row + 1, p)? });
        }
        out.push(tree_backup_return(&rewards, &q_taken, &expected, &joint, p.lambda, p.gamma)?);
        base += m + usize::from(!seg[m - 1].terminated);
    }
    Ok(out)
}

/// Single-segment convenience wrapper around [`tree_backup_targets`].
pub fn tree_backup_target(
    segment: &[Transition],
    critic: &CentralCritic,
    target: &ParamStore,
    policy: &dyn JointPolicy,
    p: &TargetParams,
) -> Result<f64> {
    Ok(tree_backup_targets(&[segment], critic, target, policy, p)?[0])
}

fn expected_at(batch: &CriticBatch, probs: &[Tensor2], row: usize, p: &TargetParams) -> Result<f64> {
    let rows: Vec<&[f64]> = probs.iter().map(|t| t.row(row)).collect();
    batch.expected_q_tot(row, &rows, p.weighting, p.c1)
}
