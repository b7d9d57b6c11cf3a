//! Per-agent softmax policies and the mixed on/off-policy actor update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critics::JointPolicy;
use crate::diffcore::{Activation, AdamConfig, Gradients, Mlp, ParamStore, Tape, Tensor2};
use crate::error::{invalid, Error, Result};
use crate::stats::DistVector;

/// Observation window to `M_i` logits, two tanh hidden layers.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    agent: usize,
    mlp: Mlp,
}

impl PolicyNet {
    pub fn new(agent: usize, input_dim: usize, num_actions: usize, hidden: usize) -> Self {
        let mlp = Mlp::new(format!("actor{agent}"), &[input_dim, hidden, hidden, num_actions], Activation::Tanh, Activation::Identity);
        Self { agent, mlp }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn num_actions(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.mlp.init(store, rng)
    }

    pub fn logits(&self, store: &ParamStore, windows: &Tensor2) -> Result<Tensor2> {
        self.mlp.eval(store, windows)
    }

    pub fn probs(&self, store: &ParamStore, windows: &Tensor2) -> Result<Tensor2> {
        Ok(self.logits(store, windows)?.softmax_rows())
    }

    /// Action distribution for a single window.
    pub fn policy(&self, store: &ParamStore, window: &[f64]) -> Result<DistVector> {
        let z = self.logits(store, &Tensor2::row_vector(window))?;
        Ok(DistVector::from_logits(z.row(0)))
    }
}

/// The advantage of one action together with its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageEval {
    pub q_values: Vec<f64>,
    pub probs: Vec<f64>,
    pub lambda: f64,
    pub value: f64,
}

/// `U_i = λ_i (Q_i(a) − Σ_x π_i(x) Q_i(x))`.
pub fn advantage(q_values: &[f64], probs: &[f64], lambda: f64, action: usize) -> Result<AdvantageEval> {
    if q_values.len() != probs.len() || action >= q_values.len() {
        return Err(Error::Shape {
            op: "advantage",
            detail: format!("{} values, {} probabilities, action {action}", q_values.len(), probs.len()),
        });
    }
    let baseline: f64 = q_values.iter().zip(probs).map(|(q, p)| q * p).sum();
    Ok(AdvantageEval { q_values: q_values.to_vec(), probs: probs.to_vec(), lambda, value: lambda * (q_values[action] - baseline) })
}

/// Score-function samples: windows, taken actions and frozen advantages.
#[derive(Clone, Debug)]
pub struct OnPolicyBatch {
    pub windows: Tensor2,
    pub actions: Vec<usize>,
    pub advantages: Vec<f64>,
}

/// Off-policy samples: windows and, per row, the frozen joint value for
/// every action of this agent with the stored co-player actions.
#[derive(Clone, Debug)]
pub struct OffPolicyBatch {
    pub windows: Tensor2,
    pub q_values: Tensor2,
}

/// Batch mean of `log π(a|τ)·U`.
pub fn on_policy_objective(actor: &PolicyNet, store: &ParamStore, batch: &OnPolicyBatch) -> Result<f64> {
    let (j, _) = on_policy_tape(actor, store, batch, false)?;
    Ok(j)
}

/// Gradient of [`on_policy_objective`] (an ascent direction).
pub fn on_policy_grad(actor: &PolicyNet, store: &ParamStore, batch: &OnPolicyBatch) -> Result<Gradients> {
    Ok(on_policy_tape(actor, store, batch, true)?.1)
}

fn on_policy_tape(actor: &PolicyNet, store: &ParamStore, batch: &OnPolicyBatch, grad: bool) -> Result<(f64, Gradients)> {
    let n = batch.actions.len();
    if n == 0 {
        return Err(invalid("on-policy gradient of an empty batch"));
    }
    if batch.windows.rows() != n || batch.advantages.len() != n {
        return Err(Error::Shape { op: "on_policy_grad", detail: format!("{} windows, {n} actions, {} advantages", batch.windows.rows(), batch.advantages.len()) });
    }
    let mut tape = Tape::new();
    let x = tape.constant(batch.windows.clone())?;
    let z = actor.mlp.record(&mut tape, store, x)?;
    let logp = tape.log_softmax(z)?;
    let taken = tape.gather(logp, &batch.actions)?;
    let u = tape.constant(Tensor2::column_vector(&batch.advantages))?;
    let prod = tape.mul(taken, u)?;
    let j = tape.mean(prod)?;
    let value = tape.value(j).item()?;
    let grads = if grad { tape.backward(j, 1.0)? } else { Gradients::new() };
    Ok((value, grads))
}

/// Batch mean of `Σ_a π(a|τ)·Q(a)`.
pub fn off_policy_objective(actor: &PolicyNet, store: &ParamStore, batch: &OffPolicyBatch) -> Result<f64> {
    Ok(off_policy_tape(actor, store, batch, false)?.0)
}

/// Gradient of [`off_policy_objective`] (an ascent direction).
pub fn off_policy_grad(actor: &PolicyNet, store: &ParamStore, batch: &OffPolicyBatch) -> Result<Gradients> {
    Ok(off_policy_tape(actor, store, batch, true)?.1)
}

fn off_policy_tape(actor: &PolicyNet, store: &ParamStore, batch: &OffPolicyBatch, grad: bool) -> Result<(f64, Gradients)> {
    let n = batch.windows.rows();
    if n == 0 {
        return Err(invalid("off-policy gradient of an empty batch"));
    }
    if batch.q_values.shape() != (n, actor.num_actions()) {
        return Err(Error::Shape { op: "off_policy_grad", detail: format!("q values {:?} for {n} rows", batch.q_values.shape()) });
    }
    let mut tape = Tape::new();
    let x = tape.constant(batch.windows.clone())?;
    let z = actor.mlp.record(&mut tape, store, x)?;
    let p = tape.softmax(z)?;
    let q = tape.constant(batch.q_values.clone())?;
    let pq = tape.mul(p, q)?;
    let rows = tape.row_sum(pq)?;
    let j = tape.mean(rows)?;
    let value = tape.value(j).item()?;
    let grads = if grad { tape.backward(j, 1.0)? } else { Gradients::new() };
    Ok((value, grads))
}

/// Which gradient arms drive the actors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorLossMode {
    OnOnly,
    OffOnly,
    Mixed,
}

impl ActorLossMode {
    /// The mixing weight of the off-policy arm under this mode.
    pub fn effective_nu(self, nu: f64) -> f64 {
        match self {
            Self::OnOnly => 0.0,
            Self::OffOnly => 1.0,
            Self::Mixed => nu,
        }
    }
}

/// `(1−ν)·g_on + ν·g_off`. An arm with zero weight may be omitted.
pub fn mixed_gradient(on: Option<&Gradients>, off: Option<&Gradients>, nu: f64) -> Result<Gradients> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(invalid(format!("mixing weight {nu} outside [0,1]")));
    }
    let mut out = Gradients::new();
    for (g, w) in [(on, 1.0 - nu), (off, nu)] {
        match g {
            Some(g) if w > 0.0 => out.add_scaled(w, g)?,
            None if w > 0.0 => return Err(invalid("mixed actor update is missing a gradient arm with positive weight")),
            _ => {}
        }
    }
    Ok(out)
}

/// Computes the mixed gradient and applies one ascent step through Adam.
/// Returns the gradient that was applied.
pub fn mixed_update(
    actor: &PolicyNet,
    store: &mut ParamStore,
    on: Option<&OnPolicyBatch>,
    off: Option<&OffPolicyBatch>,
    nu: f64,
    adam: &AdamConfig,
) -> Result<Gradients> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(invalid(format!("mixing weight {nu} outside [0,1]")));
    }
    let g_on = match on {
        Some(b) if nu < 1.0 => Some(on_policy_grad(actor, store, b)?),
        _ => None,
    };
    let g_off = match off {
        Some(b) if nu > 0.0 => Some(off_policy_grad(actor, store, b)?),
        _ => None,
    };
    let g = mixed_gradient(g_on.as_ref(), g_off.as_ref(), nu)?;
    store.adam_step(&g.clone().scaled(-1.0), adam)?;
    Ok(g)
}

/// Every agent's policy network with its own parameter store (and hence its
/// own optimizer state).
#[derive(Clone, Debug)]
pub struct ActorSet {
    nets: Vec<PolicyNet>,
    stores: Vec<ParamStore>,
}

impl ActorSet {
    pub fn new(input_dims: &[usize], action_counts: &[usize], hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_dims.len() != action_counts.len() {
            return Err(invalid("one input size per agent is required"));
        }
        let mut nets = Vec::new();
        let mut stores = Vec::new();
        for (i, (&d, &m)) in input_dims.iter().zip(action_counts).enumerate() {
            let net = PolicyNet::new(i, d, m, hidden);
            let mut store = ParamStore::new();
            net.init(&mut store, rng)?;
            nets.push(net);
            stores.push(store);
        }
        Ok(Self { nets, stores })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn net(&self, i: usize) -> &PolicyNet {
        &self.nets[i]
    }

    pub fn store(&self, i: usize) -> &ParamStore {
        &self.stores[i]
    }

    pub fn store_mut(&mut self, i: usize) -> &mut ParamStore {
        &mut self.stores[i]
    }

    /// All actor parameters in one store (names are agent-prefixed).
    pub fn merged(&self) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for s in &self.stores {
            for (name, v) in s.iter() {
                out.insert(name.clone(), v.clone())?;
            }
        }
        Ok(out)
    }

    /// Overwrites actor parameters from a store holding (at least) every
    /// actor tensor.
    pub fn load_from(&mut self, source: &ParamStore) -> Result<()> {
        for s in &mut self.stores {
            s.copy_values_from(source, "")?;
        }
        Ok(())
    }
}

impl JointPolicy for ActorSet {
    fn num_agents(&self) -> usize {
        self.nets.len()
    }

    fn probs(&self, agent: usize, windows: &Tensor2) -> Result<Tensor2> {
        self.nets[agent].probs(&self.stores[agent], windows)
    }
}
