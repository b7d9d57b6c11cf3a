//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive as it is evaluated. [`Tape::backward`]
//! walks the recorded nodes in reverse insertion order, which is a valid
//! reverse topological order because a node can only reference nodes that
//! were recorded before it.

use std::collections::{BTreeMap, HashMap};

use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::error::{invalid, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(String),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Abs(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Gather(usize, Vec<usize>),
    Column(usize, usize),
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    consumed: bool,
}

/// Parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Tensor2>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor2) {
        self.map.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Euclidean norm over every entry of every gradient.
    pub fn global_norm(&self) -> f64 {
        self.map.values().map(Tensor2::norm_sq).sum::<f64>().sqrt()
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.map.values_mut().for_each(|g| g.scale_in_place(k));
        self
    }

    /// `self += k * other`; names missing on either side count as zero.
    pub fn add_scaled(&mut self, k: f64, other: &Gradients) -> Result<()> {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(mine) => {
                    mine.check_same_shape(g, "Gradients::add_scaled")?;
                    mine.axpy(k, g);
                }
                None => {
                    let mut g = g.clone();
                    g.scale_in_place(k);
                    self.map.insert(name.clone(), g);
                }
            }
        }
        Ok(())
    }

    /// Concatenates the gradients of `names` (in order) into one flat vector;
    /// absent names contribute zeros of the stored parameter's size.
    pub fn flatten(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::new();
        for (name, value) in store.iter() {
            match self.map.get(name) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, value.len())),
            }
        }
        out
    }
}

fn finite(t: Tensor2, op: &'static str) -> Result<Tensor2> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (no gradient is propagated into it).
    pub fn constant(&mut self, value: Tensor2) -> Result<Var> {
        let value = finite(value, "constant")?;
        Ok(self.push(value, Op::Const))
    }

    /// Records a named parameter leaf; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param(name.to_string()));
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn binary_same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        self.value(a).check_same_shape(self.value(b), op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = finite(self.value(a).matmul(self.value(b))?, "matmul")?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let out = finite(self.value(a).zip_map(self.value(b), |x, y| x + y), "add")?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let out = finite(self.value(a).zip_map(self.value(b), |x, y| x - y), "sub")?;
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let out = finite(self.value(a).zip_map(self.value(b), |x, y| x * y), "mul")?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    /// `x + bias` where `bias` is a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = finite(self.value(x).add_row(self.value(bias))?, "add_row")?;
        Ok(self.push(out, Op::AddRow(x.0, bias.0)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = finite(self.value(x).map(|v| v * k), "scale")?;
        Ok(self.push(out, Op::Scale(x.0, k)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        Ok(self.push(out, Op::Tanh(x.0)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(x.0)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(x.0)))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::abs);
        Ok(self.push(out, Op::Abs(x.0)))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = finite(self.value(x).map(f64::ln), "log")?;
        Ok(self.push(out, Op::Log(x.0)))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out = finite(self.value(x).map(f64::sqrt), "sqrt")?;
        Ok(self.push(out, Op::Sqrt(x.0)))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = finite(self.value(x).map(|v| v * v), "square")?;
        Ok(self.push(out, Op::Square(x.0)))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        Ok(self.push(out, Op::Clamp(x.0, lo, hi)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = finite(self.value(x).softmax_rows(), "softmax")?;
        Ok(self.push(out, Op::Softmax(x.0)))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let out = finite(self.value(x).log_softmax_rows(), "log_softmax")?;
        Ok(self.push(out, Op::LogSoftmax(x.0)))
    }

    /// Sum of every entry, as a 1x1 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = finite(Tensor2::scalar(self.value(x).sum()), "sum")?;
        Ok(self.push(out, Op::Sum(x.0)))
    }

    /// Mean of every entry, as a 1x1 tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(invalid("mean of an empty tensor"));
        }
        let out = finite(Tensor2::scalar(t.sum() / t.len() as f64), "mean")?;
        Ok(self.push(out, Op::Mean(x.0)))
    }

    /// `r x c -> r x 1` row sums.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let sums: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = finite(Tensor2::column_vector(&sums), "row_sum")?;
        Ok(self.push(out, Op::RowSum(x.0)))
    }

    /// Picks column `idx[r]` from each row `r`, giving `r x 1`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if idx.len() != t.rows() || idx.iter().any(|&c| c >= t.cols()) {
            return Err(Error::Shape {
                op: "gather",
                detail: format!("{} indices into {:?}", idx.len(), t.shape()),
            });
        }
        let picked: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let out = Tensor2::column_vector(&picked);
        Ok(self.push(out, Op::Gather(x.0, idx.to_vec())))
    }

    /// Column `c` as `r x 1`.
    pub fn column(&mut self, x: Var, c: usize) -> Result<Var> {
        let t = self.value(x);
        if c >= t.cols() {
            return Err(Error::Shape { op: "column", detail: format!("column {c} of {:?}", t.shape()) });
        }
        let col: Vec<f64> = (0..t.rows()).map(|r| t.get(r, c)).collect();
        let out = Tensor2::column_vector(&col);
        Ok(self.push(out, Op::Column(x.0, c)))
    }

    /// Propagates `seed · ∂loss/∂·` back to every parameter leaf.
    ///
    /// The tape can only be differentiated once.
    pub fn backward(&mut self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor2::scalar(seed));
        let mut grads = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let nodes = &self.nodes;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Const => {}
                Op::Param(name) => {
                    grads.insert(name.clone(), g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(val(*b))?;
                    let gb = val(*a).matmul_tn(&g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(val(*b), |d, y| d * y);
                    let gb = g.zip_map(val(*a), |d, x| d * x);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, d) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += d;
                        }
                    }
                    accumulate(&mut adj, *bias, gb);
                    accumulate(&mut adj, *x, g);
                }
                Op::Scale(x, k) => accumulate(&mut adj, *x, g.map(|v| v * k)),
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |d, y| d * (1.0 - y * y));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(val(*x), |d, v| if v > 0.0 { d } else { 0.0 });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, |d, y| d * y * (1.0 - y));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Abs(x) => {
                    let gx = g.zip_map(val(*x), |d, v| d * v.signum() * f64::from(v != 0.0));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Log(x) => accumulate(&mut adj, *x, g.zip_map(val(*x), |d, v| d / v)),
                Op::Sqrt(x) => {
                    accumulate(&mut adj, *x, g.zip_map(&node.value, |d, y| d * 0.5 / y))
                }
                Op::Square(x) => {
                    accumulate(&mut adj, *x, g.zip_map(val(*x), |d, v| 2.0 * d * v))
                }
                Op::Clamp(x, lo, hi) => {
                    let gx = g.zip_map(val(*x), |d, v| if v >= *lo && v <= *hi { d } else { 0.0 });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut gx = Tensor2::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(d, p)| d * p).sum();
                        for ((o, d), p) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = p * (d - dot);
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::LogSoftmax(x) => {
                    let p = node.value.map(f64::exp);
                    let mut gx = Tensor2::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for ((o, d), q) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(p.row(r)) {
                            *o = d - q * total;
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    accumulate(&mut adj, *x, Tensor2::filled(r, c, g.data()[0]));
                }
                Op::Mean(x) => {
                    let (r, c) = val(*x).shape();
                    let n = (r * c) as f64;
                    accumulate(&mut adj, *x, Tensor2::filled(r, c, g.data()[0] / n));
                }
                Op::RowSum(x) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Tensor2::zeros(r, c);
                    for i in 0..r {
                        gx.row_mut(i).iter_mut().for_each(|v| *v = g.data()[i]);
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Gather(x, idx) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Tensor2::zeros(r, c);
                    for (i, &col) in idx.iter().enumerate() {
                        gx.set(i, col, g.data()[i]);
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Column(x, col) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Tensor2::zeros(r, c);
                    for i in 0..r {
                        gx.set(i, *col, g.data()[i]);
                    }
                    accumulate(&mut adj, *x, gx);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Tensor2>], idx: usize, g: Tensor2) {
    match &mut adj[idx] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
