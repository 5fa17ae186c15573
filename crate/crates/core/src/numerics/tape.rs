//! Minimal reverse-mode differentiation tape.
//!
//! A [`Tape`] records a forward computation over [`RealMatrix`] values as a
//! flat list of nodes. Nodes only ever reference earlier nodes, so the
//! backward sweep is a single reverse pass over the list. The operator set
//! is deliberately small: exactly what a graph convolutional encoder with a
//! linear decoder and a squared-error loss needs.
//!
//! Trainable values enter through [`Tape::param`], which ties a leaf to a
//! slot in a [`ParameterSet`]; [`Tape::backward`] accumulates the loss
//! gradient into that slot.

use std::sync::Arc;

use super::matrix::{RealMatrix, SparseMatrix};
use super::optim::ParameterSet;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the input and the output value.
    #[inline]
    fn derivative(self, input: f64, output: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if input > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - output * output,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    /// Left-multiplication by a fixed sparse operator.
    Propagate(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    /// Adds a `1 × cols` row to every row of the left operand.
    AddRow(Var, Var),
    Activate(Activation, Var),
    /// Mean squared error against a fixed target of the same shape.
    Mse(Var, Arc<RealMatrix>),
    Sum(Var),
    /// Rows gathered by index.
    SelectRows(Var, Arc<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: RealMatrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: RealMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &RealMatrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: RealMatrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records parameter `index` of `params` as a leaf.
    pub fn param(&mut self, params: &ParameterSet, index: usize) -> Var {
        self.push(params.value(index).clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn propagate(&mut self, operator: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = operator.mul_dense(self.value(x))?;
        Ok(self.push(value, Op::Propagate(Arc::clone(operator), x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (lhs, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != lhs.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: lhs.shape(),
                right: r.shape(),
            });
        }
        let mut value = lhs.clone();
        let cols = value.cols();
        for (k, v) in value.as_mut_slice().iter_mut().enumerate() {
            *v += r.as_slice()[k % cols];
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn activate(&mut self, activation: Activation, x: Var) -> Var {
        let value = self.value(x).map(|v| activation.apply(v));
        self.push(value, Op::Activate(activation, x))
    }

    pub fn mse(&mut self, prediction: Var, target: Arc<RealMatrix>) -> Result<Var> {
        let p = self.value(prediction);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                left: p.shape(),
                right: target.shape(),
            });
        }
        let count = (p.rows() * p.cols()).max(1) as f64;
        let loss = p
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / count;
        Ok(self.push(RealMatrix::scalar(loss), Op::Mse(prediction, target)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(RealMatrix::scalar(s), Op::Sum(x))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: src.rows(),
            });
        }
        let value = src.select_rows(&rows);
        Ok(self.push(value, Op::SelectRows(x, Arc::new(rows))))
    }

    /// Propagates d(loss)/d(node) backwards and adds the parameter
    /// gradients into `params`.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<()> {
        let loss_shape = self.value(loss).shape();
        if loss_shape != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let mut adjoints: Vec<Option<RealMatrix>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(RealMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => params.accumulate_grad(*p, &grad)?,
                Op::MatMul(a, b) => {
                    let ga = grad.matmul_transpose(self.value(*b))?;
                    let gb = self.value(*a).transpose_matmul(&grad)?;
                    accumulate(&mut adjoints, *a, ga);
                    accumulate(&mut adjoints, *b, gb);
                }
                Op::Propagate(operator, x) => {
                    let gx = operator.transpose_mul_dense(&grad)?;
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, grad.clone());
                    accumulate(&mut adjoints, *b, grad);
                }
                Op::AddRow(a, row) => {
                    let grow = grad.column_sums();
                    accumulate(&mut adjoints, *a, grad);
                    accumulate(&mut adjoints, *row, grow);
                }
                Op::Activate(act, x) => {
                    let input = self.value(*x);
                    let mut gx = grad;
                    for ((g, &i), &o) in gx
                        .as_mut_slice()
                        .iter_mut()
                        .zip(input.as_slice())
                        .zip(node.value.as_slice())
                    {
                        *g *= act.derivative(i, o);
                    }
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::Mse(pred, target) => {
                    let p = self.value(*pred);
                    let scale = 2.0 * grad.get(0, 0) / (p.rows() * p.cols()).max(1) as f64;
                    let gp = p.zip_map(target, |a, b| scale * (a - b));
                    accumulate(&mut adjoints, *pred, gp);
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut adjoints, *x, RealMatrix::filled(r, c, grad.get(0, 0)));
                }
                Op::SelectRows(x, rows) => {
                    let (r, c) = self.value(*x).shape();
                    let mut gx = RealMatrix::zeros(r, c);
                    for (k, &src) in rows.iter().enumerate() {
                        for j in 0..c {
                            let cur = gx.get(src, j);
                            gx.set(src, j, cur + grad.get(k, j));
                        }
                    }
                    accumulate(&mut adjoints, *x, gx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adjoints: &mut [Option<RealMatrix>], v: Var, g: RealMatrix) {
    match &mut adjoints[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
