//! Learning and testing exposure mappings under network interference.
//!
//! The pipeline simulates outcomes on random geometric graphs, learns a
//! scalar exposure with a graph convolutional autoencoder, tests whether a
//! researcher-chosen exposure mapping captures the interference, and
//! estimates direct effects by inverse probability weighting.

pub mod dgp;
pub mod effects;
pub mod error;
pub mod exposure;
pub mod gca;
pub mod graph;
pub mod harness;
pub mod nuisance;
pub mod numerics;
pub mod validity_test;

pub use error::{Error, Result};
