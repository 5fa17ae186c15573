//! Named trainable parameters, gradient accumulators and first-order
//! optimizers.

use rand::Rng;

use super::matrix::RealMatrix;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct Parameter {
    name: String,
    value: RealMatrix,
    grad: RealMatrix,
    first_moment: RealMatrix,
    second_moment: RealMatrix,
}

/// Parameters with matching gradient and moment buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    params: Vec<Parameter>,
    steps: u64,
}

/// Update rule applied by [`ParameterSet::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Adam,
    GradientDescent,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Optimizer::Adam),
            "gd" | "sgd" | "gradient-descent" => Ok(Optimizer::GradientDescent),
            other => Err(Error::Parse(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: RealMatrix) -> usize {
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: RealMatrix::zeros(r, c),
            first_moment: RealMatrix::zeros(r, c),
            second_moment: RealMatrix::zeros(r, c),
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.params[index].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn value(&self, index: usize) -> &RealMatrix {
        &self.params[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut RealMatrix {
        &mut self.params[index].value
    }

    pub fn grad(&self, index: usize) -> &RealMatrix {
        &self.params[index].grad
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn accumulate_grad(&mut self, index: usize, g: &RealMatrix) -> Result<()> {
        let len = self.params.len();
        let p = self
            .params
            .get_mut(index)
            .ok_or(Error::IndexOutOfRange { index, len })?;
        if p.grad.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "gradient accumulation",
                left: p.grad.shape(),
                right: g.shape(),
            });
        }
        p.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    pub fn step(&mut self, optimizer: Optimizer, lr: f64) {
        match optimizer {
            Optimizer::Adam => self.adam_step(lr),
            Optimizer::GradientDescent => self.gradient_descent_step(lr),
        }
    }

    /// One Adam update with the standard bias correction, then clears the
    /// gradients.
    pub fn adam_step(&mut self, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for p in &mut self.params {
            let value = p.value.as_mut_slice();
            let grad = p.grad.as_mut_slice();
            let m = p.first_moment.as_mut_slice();
            let v = p.second_moment.as_mut_slice();
            for k in 0..value.len() {
                let g = grad[k];
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                grad[k] = 0.0;
            }
        }
    }

    pub fn gradient_descent_step(&mut self, lr: f64) {
        self.steps += 1;
        for p in &mut self.params {
            for (w, g) in p.value.as_mut_slice().iter_mut().zip(p.grad.as_mut_slice()) {
                *w -= lr * *g;
                *g = 0.0;
            }
        }
    }
}

/// Glorot/Xavier uniform initialisation on `±sqrt(6 / (rows + cols))`.
pub fn glorot_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<RealMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("glorot_init needs rows, cols >= 1"));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    RealMatrix::from_vec(rows, cols, data)
}
