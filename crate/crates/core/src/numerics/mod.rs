//! Dense linear algebra, a reverse-mode tape and optimizers.

pub mod linalg;
pub mod matrix;
pub mod optim;
pub mod tape;

pub use linalg::{least_squares, logistic};
pub use matrix::{RealMatrix, SparseMatrix};
pub use optim::{glorot_init, Optimizer, ParameterSet};
pub use tape::{Activation, Tape, Var};
