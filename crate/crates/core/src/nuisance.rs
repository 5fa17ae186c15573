//! Nuisance functions for the validity test and the effect estimators.
//!
//! Every fitted quantity is cross-fitted: observations are split into
//! folds, and the prediction for an observation comes from a model trained
//! on the other folds only.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::exposure::Partition;
use crate::graph::Graph;
use crate::numerics::linalg::{cholesky_solve, independent_columns};
use crate::numerics::{least_squares, logistic, RealMatrix};

/// Propensities are clamped to `[TRIM, 1 − TRIM]`.
pub const PROPENSITY_TRIM: f64 = 0.01;
pub const NEWTON_MAX_ITER: usize = 100;
pub const NEWTON_TOLERANCE: f64 = 1e-8;
/// A fitted linear index beyond this magnitude is treated as separation.
const SEPARATION_INDEX: f64 = 15.0;

#[inline]
pub fn trim(p: f64) -> f64 {
    p.clamp(PROPENSITY_TRIM, 1.0 - PROPENSITY_TRIM)
}

/// Default number of cross-fitting folds.
pub const DEFAULT_FOLDS: usize = 5;

/// Random assignment of observations to `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldScheme {
    folds: usize,
    assignment: Vec<usize>,
}

impl FoldScheme {
    pub fn new(n: usize, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::invalid("cross-fitting needs at least two folds"));
        }
        if n < folds {
            return Err(Error::invalid(format!("cannot split {n} observations into {folds} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = pos % folds;
        }
        Ok(Self { folds, assignment })
    }

    /// Folds from an explicit assignment vector.
    pub fn from_assignment(folds: usize, assignment: Vec<usize>) -> Result<Self> {
        if folds < 2 || assignment.iter().any(|&f| f >= folds) {
            return Err(Error::invalid("fold labels must lie in 0..folds with folds >= 2"));
        }
        Ok(Self { folds, assignment })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::invalid(format!(
                "fold scheme covers {} observations, data has {n}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Regressor basis for an exposure: `(1, z)` or `(1, z, z²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureBasis {
    Linear,
    Quadratic,
}

impl ExposureBasis {
    pub fn width(self) -> usize {
        match self {
            ExposureBasis::Linear => 2,
            ExposureBasis::Quadratic => 3,
        }
    }

    fn push_row(self, z: f64, out: &mut Vec<f64>) {
        out.push(1.0);
        out.push(z);
        if self == ExposureBasis::Quadratic {
            out.push(z * z);
        }
    }

    pub fn design(self, values: &[f64], rows: &[usize]) -> RealMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for &i in rows {
            self.push_row(values[i], &mut data);
        }
        RealMatrix::from_vec(rows.len(), self.width(), data).expect("finite basis")
    }
}

/// Regressors of the validity test's nuisance models: the basis of `Ż`
/// followed by optional control columns such as the node's own treatment
/// and covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRegressors<'a> {
    z_dot: &'a [f64],
    basis: ExposureBasis,
    controls: Vec<Vec<f64>>,
}

impl<'a> TestRegressors<'a> {
    /// `Ż` alone, entering linearly.
    pub fn exposure_only(z_dot: &'a [f64]) -> Self {
        Self {
            z_dot,
            basis: ExposureBasis::Linear,
            controls: Vec::new(),
        }
    }

    /// `Ż` together with control columns of the same length.
    pub fn with_controls(z_dot: &'a [f64], controls: Vec<Vec<f64>>) -> Result<Self> {
        if controls.iter().any(|c| c.len() != z_dot.len()) {
            return Err(Error::invalid("control columns must match the exposure length"));
        }
        if controls.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("control columns must be finite"));
        }
        Ok(Self {
            z_dot,
            basis: ExposureBasis::Linear,
            controls,
        })
    }

    /// Replaces the basis of `Ż`. The linear default keeps the test sensitive
    /// to curvature in the outcome that `Ż` fails to explain.
    pub fn with_basis(mut self, basis: ExposureBasis) -> Self {
        self.basis = basis;
        self
    }

    pub fn len(&self) -> usize {
        self.z_dot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_dot.is_empty()
    }

    pub fn z_dot(&self) -> &[f64] {
        self.z_dot
    }

    pub fn width(&self) -> usize {
        self.basis.width() + self.controls.len()
    }

    fn push_row(&self, i: usize, out: &mut Vec<f64>) {
        self.basis.push_row(self.z_dot[i], out);
        out.extend(self.controls.iter().map(|c| c[i]));
    }

    pub fn design(&self, rows: &[usize]) -> RealMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for &i in rows {
            self.push_row(i, &mut data);
        }
        RealMatrix::from_vec(rows.len(), self.width(), data).expect("finite regressors")
    }

    fn predict(&self, i: usize, beta: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.width());
        self.push_row(i, &mut row);
        row.iter().zip(beta).map(|(a, b)| a * b).sum()
    }
}

/// Own treatment and covariate as control columns.
pub fn own_feature_controls(d: &[u8], x: &[u8]) -> Vec<Vec<f64>> {
    let col = |v: &[u8]| v.iter().map(|&b| f64::from(b)).collect::<Vec<_>>();
    vec![col(d), col(x)]
}

/// Outcome of a logistic regression fit.
#[derive(Debug, Clone, PartialEq)]
pub enum LogisticFit {
    /// Coefficients aligned with the design columns (dropped collinear
    /// columns get 0).
    Converged(Vec<f64>),
    /// Newton failed to converge or the data are (quasi-)separated.
    Separated,
}

impl LogisticFit {
    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            LogisticFit::Converged(b) => Some(b),
            LogisticFit::Separated => None,
        }
    }
}

fn log_likelihood(design: &RealMatrix, y: &[f64], beta: &[f64]) -> f64 {
    (0..design.rows())
        .map(|i| {
            let eta: f64 = design.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            // y·η − log(1 + e^η), evaluated stably.
            y[i] * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p())
        })
        .sum()
}

/// Maximum-likelihood logistic regression by damped Newton iterations.
///
/// Converges when the sup-norm of the mean score drops below
/// [`NEWTON_TOLERANCE`]; gives up after [`NEWTON_MAX_ITER`] iterations.
pub fn fit_logistic(design: &RealMatrix, y: &[f64]) -> Result<LogisticFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::invalid("logistic regression: response length differs from design"));
    }
    if n == 0 {
        return Ok(LogisticFit::Separated);
    }
    let kept = independent_columns(design);
    let reduced = {
        let mut data = Vec::with_capacity(n * kept.len());
        for i in 0..n {
            data.extend(kept.iter().map(|&j| design.get(i, j)));
        }
        RealMatrix::from_vec(n, kept.len(), data)?
    };
    let q = kept.len();
    let mut beta = vec![0.0; q];
    let mut ll = log_likelihood(&reduced, y, &beta);
    let mut converged = false;

    for _ in 0..NEWTON_MAX_ITER {
        let mut grad = vec![0.0; q];
        let mut hess = RealMatrix::zeros(q, q);
        for i in 0..n {
            let row = reduced.row(i);
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = logistic(eta);
            let w = mu * (1.0 - mu);
            for a in 0..q {
                grad[a] += (y[i] - mu) * row[a];
                for b in 0..=a {
                    let v = hess.get(a, b) + w * row[a] * row[b];
                    hess.set(a, b, v);
                }
            }
        }
        for a in 0..q {
            grad[a] /= n as f64;
            for b in 0..=a {
                let v = hess.get(a, b) / n as f64;
                hess.set(a, b, v);
                hess.set(b, a, v);
            }
        }
        if grad.iter().all(|g| g.abs() < NEWTON_TOLERANCE) {
            converged = true;
            break;
        }
        let Some(step) = cholesky_solve(&hess, &grad) else {
            return Ok(LogisticFit::Separated);
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_ll = log_likelihood(&reduced, y, &candidate);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        return Ok(LogisticFit::Separated);
    }
    let max_index = (0..n)
        .map(|i| {
            reduced
                .row(i)
                .iter()
                .zip(&beta)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    if max_index > SEPARATION_INDEX {
        return Ok(LogisticFit::Separated);
    }
    let mut full = vec![0.0; p];
    for (k, &j) in kept.iter().enumerate() {
        full[j] = beta[k];
    }
    Ok(LogisticFit::Converged(full))
}

/// Frequency of `y = 1` among training rows sharing the predictor value of
/// each target row; the overall training frequency when the value is unseen
/// or the predictor takes more than a handful of values.
fn frequency_fallback(predictor: &[f64], y: &[f64], train: &[usize], targets: &[usize]) -> Vec<f64> {
    const MAX_GROUPS: usize = 10;
    let overall = train.iter().map(|&i| y[i]).sum::<f64>() / train.len().max(1) as f64;
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for &i in train {
        match groups.iter_mut().find(|(v, _, _)| *v == predictor[i]) {
            Some(g) => {
                g.1 += y[i];
                g.2 += 1;
            }
            None => groups.push((predictor[i], y[i], 1)),
        }
        if groups.len() > MAX_GROUPS {
            return vec![overall; targets.len()];
        }
    }
    targets
        .iter()
        .map(|&i| {
            groups
                .iter()
                .find(|(v, _, _)| *v == predictor[i])
                .map_or(overall, |&(_, s, c)| s / c as f64)
        })
        .collect()
}

/// Cross-fitted logistic propensity of a binary `response` on the rows
/// produced by `design`, trimmed. Separated folds fall back to frequencies
/// within groups of `group`. Returns the predictions and the number of
/// folds that fell back.
fn cross_fit_logistic(
    design: &dyn Fn(&[usize]) -> RealMatrix,
    group: &[f64],
    response: &[f64],
    folds: &FoldScheme,
) -> Result<(Vec<f64>, usize)> {
    let n = response.len();
    folds.check_len(n)?;
    let mut out = vec![0.0; n];
    let mut fallbacks = 0;
    for k in 0..folds.folds() {
        let train = folds.train_indices(k);
        let test = folds.test_indices(k);
        let fit = fit_logistic(&design(&train), &train.iter().map(|&i| response[i]).collect::<Vec<_>>())?;
        match fit {
            LogisticFit::Converged(beta) => {
                let test_design = design(&test);
                for (r, &i) in test.iter().enumerate() {
                    let eta: f64 = test_design.row(r).iter().zip(&beta).map(|(a, b)| a * b).sum();
                    out[i] = trim(logistic(eta));
                }
            }
            LogisticFit::Separated => {
                fallbacks += 1;
                let freq = frequency_fallback(group, response, &train, &test);
                for (&i, f) in test.iter().zip(freq) {
                    out[i] = trim(f);
                }
            }
        }
    }
    Ok((out, fallbacks))
}

/// Out-of-fold `Pr(D = 1 | X)` from a logistic regression, trimmed to
/// `[0.01, 0.99]`.
pub fn fit_treatment_propensity(d: &[u8], x: &[u8], folds: &FoldScheme) -> Result<Vec<f64>> {
    if d.len() != x.len() {
        return Err(Error::invalid("treatment and covariate lengths differ"));
    }
    check_binary(d, "treatment")?;
    check_binary(x, "covariate")?;
    let xf: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let df: Vec<f64> = d.iter().map(|&v| f64::from(v)).collect();
    let design = |rows: &[usize]| ExposureBasis::Linear.design(&xf, rows);
    Ok(cross_fit_logistic(&design, &xf, &df, folds)?.0)
}

fn check_binary(v: &[u8], what: &str) -> Result<()> {
    if v.iter().any(|&b| b > 1) {
        return Err(Error::invalid(format!("{what} must be binary")));
    }
    Ok(())
}

/// `Pr(Binomial(trials, p) > threshold)`.
pub fn binomial_upper_tail(trials: usize, p: f64, threshold: usize) -> f64 {
    if trials <= threshold {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let tail: f64 = (threshold + 1..=trials)
        .map(|k| (ln_binomial(trials as u64, k as u64) + k as f64 * lp + (trials - k) as f64 * lq).exp())
        .sum();
    tail.min(1.0)
}

/// Exact `Pr(Z_i = 1 | X, A)` for the threshold exposure
/// `Z_i = 1{#neighbours with D·X = 1 > threshold}`: with `m_i` neighbours
/// having `X = 1`, each treated independently with probability
/// `logistic(3)`, this is a binomial upper tail.
pub fn oracle_exposure_propensity(g: &Graph, x: &[u8], threshold: usize) -> Result<Vec<f64>> {
    if x.len() != g.n() {
        return Err(Error::invalid("covariate length differs from node count"));
    }
    let p = crate::dgp::treatment_probability(1);
    Ok((0..g.n())
        .map(|i| {
            let eligible = g.neighbors(i).iter().filter(|&&j| x[j] == 1).count();
            binomial_upper_tail(eligible, p, threshold)
        })
        .collect())
}

/// Simulated `Pr(Z̃_i ∈ cell l | X, A)` for an exposure that is a known
/// function of the treatment vector: `D` is redrawn `draws` times from the
/// design `Pr(D_i = 1) = treatment_prob(X_i)`, and each node's cell is read
/// off the partition's fixed cut points.
pub fn simulated_cell_propensity<F>(
    x: &[u8],
    partition: &Partition,
    treatment_prob: impl Fn(u8) -> f64,
    mut exposure: F,
    draws: usize,
    seed: u64,
) -> Result<CellTable>
where
    F: FnMut(&[u8]) -> Result<Vec<f64>>,
{
    check_binary(x, "covariate")?;
    if draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = CellTable::zeros(n, partition.cells());
    let mut d = vec![0u8; n];
    for _ in 0..draws {
        for (di, &xi) in d.iter_mut().zip(x) {
            *di = u8::from(rng.random_bool(treatment_prob(xi)));
        }
        let z = exposure(&d)?;
        if z.len() != n {
            return Err(Error::invalid("exposure length differs from covariate length"));
        }
        for (i, &v) in z.iter().enumerate() {
            let l = partition.cell_of(v);
            counts.set(i, l, counts.get(i, l) + 1.0);
        }
    }
    for v in counts.values.iter_mut() {
        *v /= draws as f64;
    }
    Ok(counts)
}

/// An `n × cells` table of per-observation, per-cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    n: usize,
    cells: usize,
    values: Vec<f64>,
}

impl CellTable {
    pub fn zeros(n: usize, cells: usize) -> Self {
        Self {
            n,
            cells,
            values: vec![0.0; n * cells],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cells = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cells) {
            return Err(Error::invalid("ragged cell table"));
        }
        Ok(Self {
            n: rows.len(),
            cells,
            values: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.values[i * self.cells + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, l: usize, v: f64) {
        self.values[i * self.cells + l] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cells..(i + 1) * self.cells]
    }
}

/// Cross-fitted `μ(Ż, Z̃ ∈ cell l)` and `μ(Ż, Z̃ ∉ cell l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeans {
    pub inside: CellTable,
    pub outside: CellTable,
    /// Fits that had no training observations and used the pooled fold fit.
    pub fallback_fits: usize,
}

/// For every cell and fold, regresses `Y` on the test regressors among the
/// training observations inside the cell, and separately among those
/// outside it, then evaluates both fits at the held-out observations.
pub fn fit_cell_means(
    y: &[f64],
    regressors: &TestRegressors<'_>,
    partition: &Partition,
    folds: &FoldScheme,
) -> Result<CellMeans> {
    let n = y.len();
    if regressors.len() != n || partition.len() != n {
        return Err(Error::invalid("outcome, exposure and partition lengths differ"));
    }
    folds.check_len(n)?;
    let cells = partition.cells();
    let labels = partition.labels();
    let mut inside = CellTable::zeros(n, cells);
    let mut outside = CellTable::zeros(n, cells);
    let mut fallback_fits = 0;

    for k in 0..folds.folds() {
        let train = folds.train_indices(k);
        let test = folds.test_indices(k);
        let pooled = least_squares(
            &regressors.design(&train),
            &train.iter().map(|&i| y[i]).collect::<Vec<_>>(),
        )?;
        let mut fit_subset = |rows: Vec<usize>| -> Result<Vec<f64>> {
            if rows.is_empty() {
                fallback_fits += 1;
                return Ok(pooled.clone());
            }
            least_squares(&regressors.design(&rows), &rows.iter().map(|&i| y[i]).collect::<Vec<_>>())
        };
        for l in 0..cells {
            let (rows_in, rows_out): (Vec<usize>, Vec<usize>) =
                train.iter().partition(|&&i| labels[i] == l);
            let beta_in = fit_subset(rows_in)?;
            let beta_out = fit_subset(rows_out)?;
            for &i in &test {
                inside.set(i, l, regressors.predict(i, &beta_in));
                outside.set(i, l, regressors.predict(i, &beta_out));
            }
        }
    }
    Ok(CellMeans {
        inside,
        outside,
        fallback_fits,
    })
}

/// Cross-fitted `p_l = Pr(Z̃ ∈ cell l | regressors)` from one logistic
/// regression per cell, trimmed to `[0.01, 0.99]`.
pub fn fit_cell_propensity(regressors: &TestRegressors<'_>, partition: &Partition, folds: &FoldScheme) -> Result<CellTable> {
    Ok(fit_cell_propensity_with_diagnostics(regressors, partition, folds)?.0)
}

/// As [`fit_cell_propensity`], also returning the number of separated
/// fold fits that fell back to frequencies.
pub fn fit_cell_propensity_with_diagnostics(
    regressors: &TestRegressors<'_>,
    partition: &Partition,
    folds: &FoldScheme,
) -> Result<(CellTable, usize)> {
    let n = regressors.len();
    if partition.len() != n {
        return Err(Error::invalid("exposure and partition lengths differ"));
    }
    let design = |rows: &[usize]| regressors.design(rows);
    let mut table = CellTable::zeros(n, partition.cells());
    let mut fallbacks = 0;
    for l in 0..partition.cells() {
        let response: Vec<f64> = partition
            .labels()
            .iter()
            .map(|&c| f64::from(u8::from(c == l)))
            .collect();
        let (pred, fb) = cross_fit_logistic(&design, regressors.z_dot(), &response, folds)?;
        fallbacks += fb;
        for (i, p) in pred.into_iter().enumerate() {
            table.set(i, l, p);
        }
    }
    Ok((table, fallbacks))
}

/// All nuisance fits of the validity test.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub cell_means: CellMeans,
    pub cell_propensity: CellTable,
    pub propensity_fallbacks: usize,
}

pub fn fit_test_nuisances(
    y: &[f64],
    regressors: &TestRegressors<'_>,
    partition: &Partition,
    folds: &FoldScheme,
) -> Result<NuisanceFit> {
    let cell_means = fit_cell_means(y, regressors, partition, folds)?;
    let (cell_propensity, propensity_fallbacks) = fit_cell_propensity_with_diagnostics(regressors, partition, folds)?;
    Ok(NuisanceFit {
        cell_means,
        cell_propensity,
        propensity_fallbacks,
    })
}

/// Cross-fitted outcome regression `μ(d, z, x)` over discrete exposure
/// levels: `Y` on an intercept, `D`, `X` and level dummies.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    levels: usize,
    // per observation: [d=0 levels..., d=1 levels...]
    values: CellTable,
}

impl OutcomeModel {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn predict(&self, i: usize, d: u8, level: usize) -> f64 {
        self.values.get(i, usize::from(d) * self.levels + level)
    }

    /// `μ(d, z, x_i)` for every observation.
    pub fn column(&self, d: u8, level: usize) -> Vec<f64> {
        (0..self.values.n()).map(|i| self.predict(i, d, level)).collect()
    }
}

pub fn fit_outcome_model(
    y: &[f64],
    d: &[u8],
    x: &[u8],
    levels_of: &[usize],
    levels: usize,
    folds: &FoldScheme,
) -> Result<OutcomeModel> {
    let n = y.len();
    if d.len() != n || x.len() != n || levels_of.len() != n {
        return Err(Error::invalid("outcome model inputs have different lengths"));
    }
    if levels == 0 || levels_of.iter().any(|&z| z >= levels) {
        return Err(Error::invalid("exposure level out of range"));
    }
    folds.check_len(n)?;
    let width = 3 + levels - 1;
    let row = |dv: u8, xv: u8, z: usize| -> Vec<f64> {
        let mut r = vec![1.0, f64::from(dv), f64::from(xv)];
        r.extend((1..levels).map(|l| f64::from(u8::from(z == l))));
        r
    };
    let mut values = CellTable::zeros(n, 2 * levels);
    for k in 0..folds.folds() {
        let train = folds.train_indices(k);
        let data: Vec<f64> = train.iter().flat_map(|&i| row(d[i], x[i], levels_of[i])).collect();
        let design = RealMatrix::from_vec(train.len(), width, data)?;
        let beta = least_squares(&design, &train.iter().map(|&i| y[i]).collect::<Vec<_>>())?;
        for i in folds.test_indices(k) {
            for dv in 0..2u8 {
                for z in 0..levels {
                    let pred = row(dv, x[i], z).iter().zip(&beta).map(|(a, b)| a * b).sum();
                    values.set(i, usize::from(dv) * levels + z, pred);
                }
            }
        }
    }
    Ok(OutcomeModel { levels, values })
}
