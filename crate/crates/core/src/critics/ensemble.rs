use rand::Rng;

use crate::diffcore::{Activation, Mlp, ParamStore, Tape, Tensor2, Var};
use crate::error::{invalid, Result};

/// `N` action-value heads for one agent. Each member maps an observation
/// window to `M_i` action values through two tanh hidden layers.
///
/// Parameters live in an external [`ParamStore`]; the same names are used
/// in the live and target stores.
#[derive(Clone, Debug)]
pub struct EnsembleCritic {
    agent: usize,
    members: Vec<Mlp>,
    num_actions: usize,
}

impl EnsembleCritic {
    pub fn new(agent: usize, input_dim: usize, num_actions: usize, ensemble_size: usize, hidden: usize) -> Self {
        let members = (0..ensemble_size)
            .map(|j| {
                Mlp::new(
                    format!("critic{agent}.m{j}"),
                    &[input_dim, hidden, hidden, num_actions],
                    Activation::Tanh,
                    Activation::Identity,
                )
            })
            .collect();
        Self { agent, members, num_actions }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.members.iter().try_for_each(|m| m.init(store, rng))
    }

    /// Action values of member `j` for each row of `windows`.
    pub fn member_q(&self, store: &ParamStore, j: usize, windows: &Tensor2) -> Result<Tensor2> {
        let member = self
            .members
            .get(j)
            .ok_or_else(|| invalid(format!("member {j} out of range for ensemble of {}", self.members.len())))?;
        member.eval(store, windows)
    }

    /// Outputs of every member.
    pub fn all_member_q(&self, store: &ParamStore, windows: &Tensor2) -> Result<Vec<Tensor2>> {
        self.members.iter().map(|m| m.eval(store, windows)).collect()
    }

    /// Arithmetic mean of the members' action values.
    pub fn mean_q(&self, store: &ParamStore, windows: &Tensor2) -> Result<Tensor2> {
        Ok(mean_of(&self.all_member_q(store, windows)?))
    }

    /// Records every member on `tape`, returning the member outputs and
    /// their mean.
    pub fn record(&self, tape: &mut Tape, store: &ParamStore, windows: Var) -> Result<(Vec<Var>, Var)> {
        let outs = self.members.iter().map(|m| m.record(tape, store, windows)).collect::<Result<Vec<_>>>()?;
        let mut total = outs[0];
        for &o in &outs[1..] {
            total = tape.add(total, o)?;
        }
        let mean = tape.scale(total, 1.0 / outs.len() as f64)?;
        Ok((outs, mean))
    }
}

pub(crate) fn mean_of(tensors: &[Tensor2]) -> Tensor2 {
    let (r, c) = tensors[0].shape();
    let mut acc = Tensor2::zeros(r, c);
    for t in tensors {
        acc.axpy(1.0, t);
    }
    acc.scale_in_place(1.0 / tensors.len() as f64);
    acc
}
