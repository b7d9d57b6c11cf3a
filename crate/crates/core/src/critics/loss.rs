use super::central::CentralCritic;
use crate::diffcore::{Gradients, ParamStore, Tape, Tensor2};
use crate::error::{invalid, Error, Result};
use crate::replay::Transition;
use crate::stats::BC_EPS;

/// Regression samples for one arm of the critic loss.
#[derive(Clone, Debug)]
pub struct LossBatch {
    /// `[agent]`, each `B x input_dim_i`.
    pub windows: Vec<Tensor2>,
    pub states: Tensor2,
    /// `[agent][row]`.
    pub actions: Vec<Vec<usize>>,
    pub targets: Vec<f64>,
}

impl LossBatch {
    pub fn from_steps<'a>(steps: impl IntoIterator<Item = &'a Transition>, targets: Vec<f64>) -> Result<Self> {
        let steps: Vec<&Transition> = steps.into_iter().collect();
        if steps.len() != targets.len() {
            return Err(Error::Shape { op: "LossBatch", detail: format!("{} steps, {} targets", steps.len(), targets.len()) });
        }
        let k = steps.first().map_or(0, |t| t.actions.len());
        let windows = (0..k)
            .map(|i| Tensor2::from_rows(&steps.iter().map(|t| t.windows[i].as_slice()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let states = if steps.is_empty() {
            Tensor2::zeros(0, 0)
        } else {
            Tensor2::from_rows(&steps.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?
        };
        let actions = (0..k).map(|i| steps.iter().map(|t| t.actions[i]).collect()).collect();
        Ok(Self { windows, states, actions, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn concat(a: &Self, b: &Self) -> Result<Self> {
        if a.is_empty() {
            return Ok(b.clone());
        }
        if b.is_empty() {
            return Ok(a.clone());
        }
        let cat = |x: &Tensor2, y: &Tensor2| -> Result<Tensor2> {
            if x.cols() != y.cols() {
                return Err(Error::Shape { op: "LossBatch", detail: format!("{} vs {} columns", x.cols(), y.cols()) });
            }
            let mut data = x.data().to_vec();
            data.extend_from_slice(y.data());
            Tensor2::new(x.rows() + y.rows(), x.cols(), data)
        };
        Ok(Self {
            windows: a.windows.iter().zip(&b.windows).map(|(x, y)| cat(x, y)).collect::<Result<_>>()?,
            states: cat(&a.states, &b.states)?,
            actions: a.actions.iter().zip(&b.actions).map(|(x, y)| x.iter().chain(y).copied().collect()).collect(),
            targets: a.targets.iter().chain(&b.targets).copied().collect(),
        })
    }
}

/// Scalar pieces of one critic-loss evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub mse_on: f64,
    pub mse_off: f64,
    /// `Σ_i` of the batch-averaged total Bhattacharyya distance between each
    /// member's softmax and the ensemble mean's softmax.
    pub bhattacharyya: f64,
}

/// `c·MSE_on + (1−c)·MSE_off − C2·Σ_i mean_states δ_B_total(Q_i)` and its
/// gradient with respect to every ensemble and mixer parameter in `store`.
/// The regularizer is averaged over the states of both batches.
pub fn critic_loss(
    critic: &CentralCritic,
    store: &ParamStore,
    on: &LossBatch,
    off: &LossBatch,
    c: f64,
    c2: f64,
) -> Result<(LossReport, Gradients)> {
    if !(0.0..=1.0).contains(&c) {
        return Err(invalid(format!("on/off balance c = {c} outside [0,1]")));
    }
    if (c > 0.0 && on.is_empty()) || (c < 1.0 && off.is_empty()) {
        return Err(invalid(format!("critic loss with c = {c} needs both batches non-empty")));
    }
    let all = LossBatch::concat(on, off)?;
    let (n_on, n_off, n) = (on.len(), off.len(), all.len());
    let k = critic.num_agents();

    let mut tape = Tape::new();
    let windows = all.windows.iter().map(|w| tape.constant(w.clone())).collect::<Result<Vec<_>>>()?;
    let states = tape.constant(all.states.clone())?;
    let rec = critic.record(&mut tape, store, &windows, states)?;

    let mut q_tot = rec.bias;
    for i in 0..k {
        let qi = tape.gather(rec.means[i], &all.actions[i])?;
        let li = tape.column(rec.lambdas, i)?;
        let term = tape.mul(li, qi)?;
        q_tot = tape.add(q_tot, term)?;
    }
    let y = tape.constant(Tensor2::column_vector(&all.targets))?;
    let err = tape.sub(q_tot, y)?;
    let sq = tape.square(err)?;
    let w_on = if n_on > 0 { c / n_on as f64 } else { 0.0 };
    let w_off = if n_off > 0 { (1.0 - c) / n_off as f64 } else { 0.0 };
    let row_w: Vec<f64> = (0..n).map(|r| if r < n_on { w_on } else { w_off }).collect();
    let row_w = tape.constant(Tensor2::column_vector(&row_w))?;
    let weighted = tape.mul(sq, row_w)?;
    let mse = tape.sum(weighted)?;

    // Σ_i Σ_j −ln BC(softmax(mean_i), softmax(member_ij)), averaged over rows.
    let mut log_bc_sum = None;
    for i in 0..k {
        let p_mean = tape.softmax(rec.means[i])?;
        for &member in &rec.members[i] {
            let p_j = tape.softmax(member)?;
            let prod = tape.mul(p_mean, p_j)?;
            let root = tape.sqrt(prod)?;
            let bc = tape.row_sum(root)?;
            let bc = tape.clamp(bc, BC_EPS, 1.0)?;
            let lb = tape.log(bc)?;
            log_bc_sum = Some(match log_bc_sum {
                None => lb,
                Some(acc) => tape.add(acc, lb)?,
            });
        }
    }
    let log_bc_sum = log_bc_sum.ok_or_else(|| invalid("critic without agents"))?;
    let mean_log_bc = tape.mean(log_bc_sum)?;
    // −C2·(−mean log BC) = C2·mean log BC
    let reg = tape.scale(mean_log_bc, c2)?;
    let loss = tape.add(mse, reg)?;

    let sq_vals = tape.value(sq).data().to_vec();
    let mean_of = |r: std::ops::Range<usize>| if r.is_empty() { 0.0 } else { sq_vals[r.clone()].iter().sum::<f64>() / r.len() as f64 };
    let report = LossReport {
        loss: tape.value(loss).item()?,
        mse_on: mean_of(0..n_on),
        mse_off: mean_of(n_on..n),
        bhattacharyya: -tape.value(mean_log_bc).item()?,
    };
    if !report.loss.is_finite() {
        return Err(Error::NonFinite("critic loss"));
    }
    let grads = tape.backward(loss, 1.0)?;
    Ok((report, grads))
}
