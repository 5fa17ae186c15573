//! Graph convolutional autoencoder.
//!
//! The encoder stacks graph convolutions `H ← σ(Â H W)` with the
//! self-loop-free normalised adjacency `Â`, ending in a single channel whose
//! output is the learned exposure. A scalar linear decoder maps that channel
//! to an outcome prediction, and the whole model is fitted full-batch on the
//! mean squared error.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exposure::{ExposureKind, ExposureVector};
use crate::graph::{normalized_adjacency, Graph};
use crate::numerics::{glorot_init, Activation, Optimizer, ParameterSet, RealMatrix, SparseMatrix, Tape, Var};

/// Input features per node: own treatment and covariate.
pub const INPUT_DIM: usize = 2;

const MODEL_MAGIC: &str = "gca-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct GcaConfig {
    /// Output widths of the encoder layers; the last one must be 1.
    pub encoder_layer_dims: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden_activation: Activation,
    pub optimizer: Optimizer,
    /// Fit the network to `(Y − Ȳ) / sd(Y)` and fold the scaling back into
    /// the decoder afterwards. The fitted model is on the original scale
    /// either way; standardising only changes the optimisation path.
    pub standardize_target: bool,
    pub seed: u64,
}

impl Default for GcaConfig {
    fn default() -> Self {
        Self {
            encoder_layer_dims: vec![16, 1],
            learning_rate: 0.01,
            epochs: 200,
            hidden_activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            standardize_target: true,
            seed: 0,
        }
    }
}

impl GcaConfig {
    pub fn with_hidden_width(mut self, width: usize) -> Self {
        self.encoder_layer_dims = vec![width, 1];
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.encoder_layer_dims.last() {
            Some(1) => {}
            _ => return Err(Error::invalid("the last encoder layer must have width 1")),
        }
        if self.encoder_layer_dims.contains(&0) {
            return Err(Error::invalid("encoder widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcaModel {
    pub encoder_weights: Vec<RealMatrix>,
    pub decoder_weight: f64,
    pub decoder_bias: f64,
    pub hidden_activation: Activation,
    /// Training loss before each optimizer step, followed by the final loss.
    pub loss_history: Vec<f64>,
}

/// `(d_i, x_i)` rows.
pub fn build_features(d: &[u8], x: &[u8]) -> Result<RealMatrix> {
    if d.len() != x.len() {
        return Err(Error::invalid(format!(
            "treatment and covariate lengths differ ({} vs {})",
            d.len(),
            x.len()
        )));
    }
    let data = d
        .iter()
        .zip(x)
        .flat_map(|(&di, &xi)| [f64::from(di), f64::from(xi)])
        .collect();
    RealMatrix::from_vec(d.len(), INPUT_DIM, data)
}

impl GcaModel {
    /// Glorot-initialised model with the decoder bias at `bias`.
    pub fn initialize(cfg: &GcaConfig, bias: f64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut encoder_weights = Vec::with_capacity(cfg.encoder_layer_dims.len());
        let mut fan_in = INPUT_DIM;
        for &width in &cfg.encoder_layer_dims {
            encoder_weights.push(glorot_init(fan_in, width, &mut rng)?);
            fan_in = width;
        }
        let decoder_weight = glorot_init(1, 1, &mut rng)?.get(0, 0);
        Ok(Self {
            encoder_weights,
            decoder_weight,
            decoder_bias: bias,
            hidden_activation: cfg.hidden_activation,
            loss_history: Vec::new(),
        })
    }

    fn validate_shapes(&self) -> Result<()> {
        let mut fan_in = INPUT_DIM;
        for w in &self.encoder_weights {
            if w.rows() != fan_in {
                return Err(Error::ShapeMismatch {
                    op: "encoder layer",
                    left: (fan_in, w.cols()),
                    right: w.shape(),
                });
            }
            fan_in = w.cols();
        }
        if self.encoder_weights.is_empty() || fan_in != 1 {
            return Err(Error::invalid("encoder must end in a single channel"));
        }
        Ok(())
    }

    fn to_parameters(&self) -> ParameterSet {
        let mut ps = ParameterSet::new();
        for (k, w) in self.encoder_weights.iter().enumerate() {
            ps.insert(format!("encoder.{k}"), w.clone());
        }
        ps.insert("decoder.weight", RealMatrix::scalar(self.decoder_weight));
        ps.insert("decoder.bias", RealMatrix::scalar(self.decoder_bias));
        ps
    }

    fn load_parameters(&mut self, ps: &ParameterSet) {
        let layers = self.encoder_weights.len();
        for (k, w) in self.encoder_weights.iter_mut().enumerate() {
            *w = ps.value(k).clone();
        }
        self.decoder_weight = ps.value(layers).get(0, 0);
        self.decoder_bias = ps.value(layers + 1).get(0, 0);
    }

    /// Writes the named weight matrices as text. Every number uses Rust's
    /// shortest round-trip formatting, so `load` reproduces the bits.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MODEL_MAGIC}")?;
        writeln!(out, "activation {}", self.hidden_activation.name())?;
        let ps = self.to_parameters();
        for k in 0..ps.len() {
            let m = ps.value(k);
            writeln!(out, "matrix {} {} {}", ps.name(k), m.rows(), m.cols())?;
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of model file".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != MODEL_MAGIC {
            return Err(Error::Parse("not a gca model file".into()));
        }
        let act_line = next()?;
        let hidden_activation = act_line
            .strip_prefix("activation ")
            .ok_or_else(|| Error::Parse("missing activation line".into()))?
            .trim()
            .parse()?;

        let mut matrices: Vec<(String, RealMatrix)> = Vec::new();
        while let Ok(header) = next() {
            let header = header.trim().to_string();
            if header.is_empty() {
                continue;
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [tag, name, rows, cols] = parts[..] else {
                return Err(Error::Parse(format!("bad matrix header '{header}'")));
            };
            if tag != "matrix" {
                return Err(Error::Parse(format!("bad matrix header '{header}'")));
            }
            let parse_dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad dimension '{s}': {e}")))
            };
            let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                for tok in next()?.split_whitespace() {
                    data.push(
                        tok.parse::<f64>()
                            .map_err(|e| Error::Parse(format!("bad number '{tok}': {e}")))?,
                    );
                }
            }
            matrices.push((name.to_string(), RealMatrix::from_vec(rows, cols, data)?));
        }

        let take = |name: &str| -> Result<RealMatrix> {
            matrices
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::Parse(format!("model file lacks '{name}'")))
        };
        let mut encoder_weights = Vec::new();
        while let Some((_, m)) = matrices
            .iter()
            .find(|(n, _)| *n == format!("encoder.{}", encoder_weights.len()))
        {
            encoder_weights.push(m.clone());
        }
        let model = Self {
            encoder_weights,
            decoder_weight: take("decoder.weight")?.get(0, 0),
            decoder_bias: take("decoder.bias")?.get(0, 0),
            hidden_activation,
            loss_history: Vec::new(),
        };
        model.validate_shapes()?;
        Ok(model)
    }
}

fn record_forward(
    tape: &mut Tape,
    ps: &ParameterSet,
    layers: usize,
    activation: Activation,
    propagation: &Arc<SparseMatrix>,
    features: &RealMatrix,
) -> Result<Var> {
    let mut h = tape.constant(features.clone());
    for k in 0..layers {
        let w = tape.param(ps, k);
        let aggregated = tape.propagate(propagation, h)?;
        let linear = tape.matmul(aggregated, w)?;
        let act = if k + 1 == layers {
            Activation::Identity
        } else {
            activation
        };
        h = tape.activate(act, linear);
    }
    let w_dec = tape.param(ps, layers);
    let b_dec = tape.param(ps, layers + 1);
    let scaled = tape.matmul(h, w_dec)?;
    tape.add_row(scaled, b_dec)
}

/// Forward pass returning the `n × 1` embedding and prediction.
pub fn forward(
    model: &GcaModel,
    propagation: &Arc<SparseMatrix>,
    features: &RealMatrix,
) -> Result<(RealMatrix, RealMatrix)> {
    model.validate_shapes()?;
    if features.cols() != INPUT_DIM || features.rows() != propagation.rows() {
        return Err(Error::ShapeMismatch {
            op: "gca forward",
            left: (propagation.rows(), propagation.cols()),
            right: features.shape(),
        });
    }
    // Same arithmetic as the training path, without a tape.
    let layers = model.encoder_weights.len();
    let mut h = features.clone();
    for (k, w) in model.encoder_weights.iter().enumerate() {
        let act = if k + 1 == layers {
            Activation::Identity
        } else {
            model.hidden_activation
        };
        h = propagation.mul_dense(&h)?.matmul(w)?.map(|v| act.apply(v));
    }
    let prediction = h.map(|v| v * model.decoder_weight + model.decoder_bias);
    Ok((h, prediction))
}

/// Mean squared error of the model on `y` and its gradient, flattened in
/// parameter order (encoder layers, decoder weight, decoder bias).
pub fn loss_and_gradient(
    model: &GcaModel,
    propagation: &Arc<SparseMatrix>,
    features: &RealMatrix,
    y: &[f64],
) -> Result<(f64, Vec<RealMatrix>)> {
    model.validate_shapes()?;
    let mut ps = model.to_parameters();
    let target = Arc::new(RealMatrix::column(y));
    let mut tape = Tape::new();
    let prediction = record_forward(
        &mut tape,
        &ps,
        model.encoder_weights.len(),
        model.hidden_activation,
        propagation,
        features,
    )?;
    let loss = tape.mse(prediction, target)?;
    tape.backward(loss, &mut ps)?;
    let grads = (0..ps.len()).map(|k| ps.grad(k).clone()).collect();
    Ok((tape.value(loss).get(0, 0), grads))
}

/// Fits the autoencoder by full-batch optimisation of the mean squared error.
pub fn train(g: &Graph, d: &[u8], x: &[u8], y: &[f64], cfg: &GcaConfig) -> Result<GcaModel> {
    cfg.validate()?;
    let n = g.n();
    if n < 2 {
        return Err(Error::invalid("training needs at least two nodes"));
    }
    if y.len() != n || d.len() != n || x.len() != n {
        return Err(Error::invalid("data lengths must match the graph"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("outcomes must be finite"));
    }
    let propagation = normalized_adjacency(g).normalized_adjacency;
    let features = build_features(d, x)?;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sd_y = (y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / n as f64).sqrt();
    // (shift, scale) of the training target
    let (shift, scale) = if cfg.standardize_target && sd_y > 0.0 {
        (mean_y, sd_y)
    } else {
        (0.0, 1.0)
    };
    let target: Vec<f64> = y.iter().map(|v| (v - shift) / scale).collect();
    let mut model = GcaModel::initialize(cfg, (mean_y - shift) / scale)?;
    let layers = model.encoder_weights.len();
    let mut ps = model.to_parameters();
    let target = Arc::new(RealMatrix::column(&target));
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..=cfg.epochs {
        let mut tape = Tape::new();
        let prediction = record_forward(&mut tape, &ps, layers, cfg.hidden_activation, &propagation, &features)?;
        let loss_var = tape.mse(prediction, Arc::clone(&target))?;
        let loss = tape.value(loss_var).get(0, 0);
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch, loss });
        }
        history.push(loss * scale * scale);
        if epoch == cfg.epochs {
            break;
        }
        tape.backward(loss_var, &mut ps)?;
        ps.step(cfg.optimizer, cfg.learning_rate);
    }
    model.load_parameters(&ps);
    model.decoder_weight *= scale;
    model.decoder_bias = model.decoder_bias * scale + shift;
    model.loss_history = history;
    Ok(model)
}

/// The encoder output as a learned exposure.
pub fn learned_exposure(model: &GcaModel, g: &Graph, d: &[u8], x: &[u8]) -> Result<ExposureVector> {
    let propagation = normalized_adjacency(g).normalized_adjacency;
    let features = build_features(d, x)?;
    let (embedding, _) = forward(model, &propagation, &features)?;
    ExposureVector::new(embedding.into_vec(), ExposureKind::Learned)
}

/// Learned exposure of each node with its own features zeroed, so that
/// `Z̃_i` depends on `(D_j, X_j)`, `j ≠ i`, only.
///
/// Without self-loops a single layer already ignores the node's own row, but
/// deeper encoders see it again through paths `i → j → i`. Only the
/// `K`-hop neighbourhood of each node is recomputed.
pub fn leave_own_out_exposure(model: &GcaModel, g: &Graph, d: &[u8], x: &[u8]) -> Result<ExposureVector> {
    model.validate_shapes()?;
    let features = build_features(d, x)?;
    if features.rows() != g.n() {
        return Err(Error::ShapeMismatch {
            op: "leave-own-out exposure",
            left: (g.n(), g.n()),
            right: features.shape(),
        });
    }
    let n = g.n();
    let layers = model.encoder_weights.len();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| match g.degree(i) {
            0 => 0.0,
            k => 1.0 / (k as f64).sqrt(),
        })
        .collect();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        // nodes whose layer-k output feeds node i's final embedding
        let mut needed = vec![vec![i]];
        for _ in 0..layers {
            let mut next: Vec<usize> = needed
                .last()
                .unwrap()
                .iter()
                .flat_map(|&r| g.neighbors(r).iter().copied())
                .collect();
            next.sort_unstable();
            next.dedup();
            needed.push(next);
        }
        needed.reverse();
        let mut prev: std::collections::HashMap<usize, Vec<f64>> = needed[0]
            .iter()
            .map(|&j| {
                let row = if j == i { vec![0.0; INPUT_DIM] } else { features.row(j).to_vec() };
                (j, row)
            })
            .collect();
        for (k, w) in model.encoder_weights.iter().enumerate() {
            let act = if k + 1 == layers {
                Activation::Identity
            } else {
                model.hidden_activation
            };
            let mut current = std::collections::HashMap::with_capacity(needed[k + 1].len());
            for &r in &needed[k + 1] {
                let mut aggregated = vec![0.0; w.rows()];
                for &j in g.neighbors(r) {
                    let weight = inv_sqrt[r] * inv_sqrt[j];
                    for (a, v) in aggregated.iter_mut().zip(&prev[&j]) {
                        *a += weight * v;
                    }
                }
                let out: Vec<f64> = (0..w.cols())
                    .map(|c| act.apply((0..w.rows()).map(|q| aggregated[q] * w.get(q, c)).sum()))
                    .collect();
                current.insert(r, out);
            }
            prev = current;
        }
        values.push(prev[&i][0]);
    }
    ExposureVector::new(values, ExposureKind::Learned)
}
