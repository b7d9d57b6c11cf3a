use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Mlp, ParamStore, Tape, Tensor2, Var};
use crate::error::{invalid, Error, Result};
use crate::stats::uncertainty_weight;

/// State-conditioned hypernetworks producing the positive coefficients
/// `λ_i(s)` and the bias `b(s)` of the value decomposition.
#[derive(Clone, Debug)]
pub struct MixerNet {
    coeffs: Mlp,
    bias: Mlp,
    num_agents: usize,
}

impl MixerNet {
    pub fn new(state_dim: usize, num_agents: usize, hidden: usize) -> Self {
        Self {
            // Absolute-value head keeps every coefficient nonnegative.
            coeffs: Mlp::new("mixer.w", &[state_dim, hidden, num_agents], Activation::Relu, Activation::Abs),
            bias: Mlp::new("mixer.b", &[state_dim, hidden, 1], Activation::Relu, Activation::Identity),
            num_agents,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.coeffs.init(store, rng)?;
        self.bias.init(store, rng)
    }

    /// `(λ: B x K, b: B x 1)` for a batch of global states.
    pub fn coefficients(&self, store: &ParamStore, states: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let lambdas = self.coeffs.eval(store, states)?;
        if lambdas.data().iter().any(|&l| l <= 0.0) {
            return Err(invalid("mixer produced a non-positive coefficient"));
        }
        Ok((lambdas, self.bias.eval(store, states)?))
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, states: Var) -> Result<(Var, Var)> {
        let l = self.coeffs.record(tape, store, states)?;
        let b = self.bias.record(tape, store, states)?;
        Ok((l, b))
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.coeffs.param_names();
        names.extend(self.bias.param_names());
        names
    }
}

/// Decomposed joint value at one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QtotEval {
    pub q_values: Vec<f64>,
    pub raw_kurtoses: Vec<f64>,
    pub weights: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub bias: f64,
    pub total: f64,
}

/// `Σ_i k_i λ_i Q_i + b`, with `k_i` the kurtosis weight when `weighting` is
/// on and 1 otherwise.
pub fn mix(
    lambdas: &[f64],
    bias: f64,
    q_values: &[f64],
    raw_kurtoses: &[f64],
    weighting: bool,
    c1: f64,
) -> Result<QtotEval> {
    let k = lambdas.len();
    if q_values.len() != k || raw_kurtoses.len() != k {
        return Err(Error::Shape {
            op: "mix",
            detail: format!("{} coefficients, {} values, {} kurtoses", k, q_values.len(), raw_kurtoses.len()),
        });
    }
    if let Some(l) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(invalid(format!("mixing coefficient must be positive, got {l}")));
    }
    let weights = if weighting {
        raw_kurtoses.iter().map(|&kap| uncertainty_weight(kap, c1)).collect::<Result<Vec<_>>>()?
    } else {
        vec![1.0; k]
    };
    let total = (0..k).map(|i| weights[i] * lambdas[i] * q_values[i]).sum::<f64>() + bias;
    Ok(QtotEval {
        q_values: q_values.to_vec(),
        raw_kurtoses: raw_kurtoses.to_vec(),
        weights,
        lambdas: lambdas.to_vec(),
        bias,
        total,
    })
}
