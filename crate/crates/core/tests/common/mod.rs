//! Oracles shared by the integration tests and the acceptance suite. Each
//! one recomputes a quantity by a route independent of the library code
//! path it checks.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use netexp::dgp::treatment_probability;
use netexp::gca::{build_features, forward, loss_and_gradient, GcaConfig, GcaModel};
use netexp::graph::{normalized_adjacency, Graph};
use netexp::numerics::{Activation, RealMatrix, SparseMatrix};

/// A random graph on `n` nodes with each edge present with probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Small GCA problem with random weights.
pub struct GcaInstance {
    pub model: GcaModel,
    pub propagation: Arc<SparseMatrix>,
    pub features: RealMatrix,
    pub y: Vec<f64>,
}

pub fn random_gca_instance(seed: u64) -> GcaInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=10);
    let g = random_graph(n, 0.5, &mut rng);
    let d: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.6))).collect();
    let x: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
    let width = rng.random_range(2..=6);
    let activation = [Activation::Relu, Activation::Tanh][seed as usize % 2];
    let cfg = GcaConfig {
        encoder_layer_dims: vec![width, 1],
        hidden_activation: activation,
        seed,
        ..GcaConfig::default()
    };
    let mut model = GcaModel::initialize(&cfg, rng.random_range(-1.0..1.0)).unwrap();
    model.decoder_weight = rng.random_range(0.5..2.0);
    GcaInstance {
        model,
        propagation: normalized_adjacency(&g).normalized_adjacency,
        features: build_features(&d, &x).unwrap(),
        y,
    }
}

/// Mean squared error through the tape-free forward pass.
fn plain_loss(model: &GcaModel, inst: &GcaInstance) -> f64 {
    let (_, prediction) = forward(model, &inst.propagation, &inst.features).unwrap();
    let n = inst.y.len() as f64;
    prediction
        .as_slice()
        .iter()
        .zip(&inst.y)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n
}

/// Largest relative error between the reverse-mode gradient and central
/// differences of the forward loss with step `h`. Relative error is taken
/// against `max(|analytic|, |numeric|, 1e-6)` so entries that are zero on
/// both sides do not divide by zero.
pub fn max_gradient_error(inst: &GcaInstance, h: f64) -> f64 {
    let (_, grads) = loss_and_gradient(&inst.model, &inst.propagation, &inst.features, &inst.y).unwrap();
    let layers = inst.model.encoder_weights.len();
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for k in 0..layers {
        let (rows, cols) = inst.model.encoder_weights[k].shape();
        for r in 0..rows {
            for c in 0..cols {
                let mut plus = inst.model.clone();
                let mut minus = inst.model.clone();
                let w = plus.encoder_weights[k].get(r, c);
                plus.encoder_weights[k].set(r, c, w + h);
                minus.encoder_weights[k].set(r, c, w - h);
                let numeric = (plain_loss(&plus, inst) - plain_loss(&minus, inst)) / (2.0 * h);
                compare(grads[k].get(r, c), numeric);
            }
        }
    }
    let mut plus = inst.model.clone();
    let mut minus = inst.model.clone();
    plus.decoder_weight += h;
    minus.decoder_weight -= h;
    compare(
        grads[layers].get(0, 0),
        (plain_loss(&plus, inst) - plain_loss(&minus, inst)) / (2.0 * h),
    );
    let mut plus = inst.model.clone();
    let mut minus = inst.model.clone();
    plus.decoder_bias += h;
    minus.decoder_bias -= h;
    compare(
        grads[layers + 1].get(0, 0),
        (plain_loss(&plus, inst) - plain_loss(&minus, inst)) / (2.0 * h),
    );
    worst
}

/// One observation of the 3-observation score fixture:
/// `(y, cell, means_in, means_out, propensities)`.
pub type ScoreCase = (f64, usize, [f64; 2], [f64; 2], [f64; 2]);

pub const SCORE_CASES: [ScoreCase; 3] = [
    (2.0, 0, [1.5, 0.5], [0.8, 1.2], [0.4, 0.6]),
    (-1.0, 1, [0.2, -0.3], [0.1, 0.4], [0.25, 0.75]),
    (0.5, 0, [1.0, 1.0], [1.0, 1.0], [0.5, 0.5]),
];

/// Scores of [`SCORE_CASES`] at `θ = 0`, evaluated by hand in exact
/// rational arithmetic: 239/50, 61/30 and 0.
pub const SCORE_HAND_VALUES: [f64; 3] = [239.0 / 50.0, 61.0 / 30.0, 0.0];

/// Frequency of `Z_i = 1{#neighbours with D·X = 1 > threshold}` over
/// `draws` redraws of the treatments with the covariates and graph fixed.
pub fn exposure_frequency(g: &Graph, x: &[u8], threshold: usize, draws: usize, seed: u64) -> Vec<f64> {
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; n];
    let mut d = vec![0u8; n];
    for _ in 0..draws {
        for j in 0..n {
            d[j] = u8::from(rng.random::<f64>() < treatment_probability(x[j]));
        }
        for (i, hit) in hits.iter_mut().enumerate() {
            let count = g.neighbors(i).iter().filter(|&&j| d[j] == 1 && x[j] == 1).count();
            if count > threshold {
                *hit += 1;
            }
        }
    }
    hits.into_iter().map(|h| h as f64 / draws as f64).collect()
}

/// The fixed 20-node graph used by the propensity oracle.
pub fn propensity_fixture() -> (Graph, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let g = random_graph(20, 0.3, &mut rng);
    let x: Vec<u8> = (0..20).map(|_| u8::from(rng.random_bool(0.6))).collect();
    (g, x)
}
