use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    /// Absolute value; used where an output must stay nonnegative.
    Abs,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Abs => v.abs(),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Abs => tape.abs(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    weight: String,
    bias: String,
    fan_in: usize,
    fan_out: usize,
    act: Activation,
}

/// Fully connected network description; parameters live in a [`ParamStore`]
/// under `"{prefix}.l{k}.w"` (fan_in x fan_out) and `"{prefix}.l{k}.b"` (1 x fan_out).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    prefix: String,
    layers: Vec<Layer>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn new(prefix: impl Into<String>, sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let prefix = prefix.into();
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| Layer {
                weight: format!("{prefix}.l{k}.w"),
                bias: format!("{prefix}.l{k}.b"),
                fan_in: sizes[k],
                fan_out: sizes[k + 1],
                act: if k + 1 == n { output } else { hidden },
            })
            .collect();
        Self { prefix, layers }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Names of every parameter of this network.
    pub fn param_names(&self) -> Vec<String> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    /// Uniform `±1/√fan_in` initialization of weights and biases.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for l in &self.layers {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            let w = (0..l.fan_in * l.fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            let b = (0..l.fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            store.insert(l.weight.clone(), Tensor2::new(l.fan_in, l.fan_out, w)?)?;
            store.insert(l.bias.clone(), Tensor2::new(1, l.fan_out, b)?)?;
        }
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero(&self, store: &mut ParamStore) -> Result<()> {
        for l in &self.layers {
            store.insert(l.weight.clone(), Tensor2::zeros(l.fan_in, l.fan_out))?;
            store.insert(l.bias.clone(), Tensor2::zeros(1, l.fan_out))?;
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor2) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "Mlp",
                detail: format!("{} expects {} input columns, got {}", self.prefix, self.input_dim(), input.cols()),
            });
        }
        Ok(())
    }

    /// Records the network on `tape` and returns the output node.
    pub fn record(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        self.check_input(tape.value(input))?;
        let mut h = input;
        for l in &self.layers {
            let w = tape.param(store, &l.weight)?;
            let b = tape.param(store, &l.bias)?;
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            h = l.act.record(tape, z)?;
        }
        Ok(h)
    }

    /// Tape-free evaluation.
    pub fn eval(&self, store: &ParamStore, input: &Tensor2) -> Result<Tensor2> {
        self.check_input(input)?;
        let mut h = input.matmul(store.value(&self.layers[0].weight)?)?;
        for (k, l) in self.layers.iter().enumerate() {
            if k > 0 {
                h = h.matmul(store.value(&l.weight)?)?;
            }
            h = h.add_row(store.value(&l.bias)?)?;
            let act = l.act;
            h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("Mlp::eval"));
        }
        Ok(h)
    }
}

/// Evaluates `graph` on `input`, recording a fresh tape.
///
/// Returns the output node and the tape holding it.
pub fn forward(graph: &Mlp, input: &Tensor2, params: &ParamStore) -> Result<(Var, Tape)> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone())?;
    let out = graph.record(&mut tape, params, x)?;
    Ok((out, tape))
}
