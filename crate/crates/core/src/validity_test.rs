//! Conditional mean independence test of a researcher-defined exposure.
//!
//! If the researcher's mapping `Ż` captures all interference, the learned
//! exposure `Z̃` carries no information about `Y` once `Ż` is known. The
//! test discretises `Z̃` into quantile cells, cross-fits the cell-wise
//! conditional means and cell propensities given `Ż`, and estimates the
//! aggregated contrast `θ` with a Neyman-orthogonal score. `H₀: θ = 0` is
//! assessed with a normal test. `θ` is a sum of squared cell contrasts, so
//! departures from the null are positive and the default alternative is
//! `θ > 0`; the two-sided version is available.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::exposure::{quantile_partition, ExposureVector, Partition};
use crate::nuisance::{fit_test_nuisances, FoldScheme, NuisanceFit, TestRegressors};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const DEFAULT_CELLS: usize = 4;

/// How the per-observation scores are combined into `θ̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Aggregation {
    /// One pooled estimating equation over all observations.
    #[default]
    Pooled,
    /// Average of the per-fold solutions.
    FoldAverage,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pooled" | "dml2" => Ok(Aggregation::Pooled),
            "fold-average" | "dml1" => Ok(Aggregation::FoldAverage),
            other => Err(Error::Parse(format!("unknown aggregation '{other}'"))),
        }
    }
}

/// Alternative hypothesis of the test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Alternative {
    /// `θ > 0`.
    #[default]
    Greater,
    /// `θ ≠ 0`.
    TwoSided,
}

impl Alternative {
    pub fn p_value(self, z: f64) -> f64 {
        match self {
            Alternative::Greater => upper_p_value(z),
            Alternative::TwoSided => two_sided_p_value(z),
        }
    }
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greater" | "upper" | "one-sided" => Ok(Alternative::Greater),
            "two-sided" | "two" => Ok(Alternative::TwoSided),
            other => Err(Error::Parse(format!("unknown alternative '{other}'"))),
        }
    }
}

/// Settings of one test run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TestOptions {
    /// Number of quantile cells `L`.
    pub cells: usize,
    pub aggregation: Aggregation,
    pub alternative: Alternative,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            cells: DEFAULT_CELLS,
            aggregation: Aggregation::default(),
            alternative: Alternative::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub theta_hat: f64,
    pub std_error: f64,
    pub z_stat: f64,
    pub p_value: f64,
    pub reject_at_05: bool,
    pub effective_cells: usize,
    /// Mean of the score's nuisance part within each fold.
    pub fold_score_means: Vec<f64>,
    /// Cell-mean fits that fell back to the pooled fold fit.
    pub mean_fallbacks: usize,
    /// Cell-propensity fold fits that fell back to frequencies.
    pub propensity_fallbacks: usize,
    pub aggregation: Aggregation,
    pub alternative: Alternative,
}

/// A test together with the intermediate objects it was computed from.
#[derive(Debug, Clone)]
pub struct TestRun {
    pub result: TestResult,
    pub partition: Partition,
    pub nuisances: NuisanceFit,
    /// `ψ(W_i, 0, η̂)` per observation.
    pub score_parts: Vec<f64>,
}

/// Orthogonal score for one observation:
///
/// ```text
/// ψ = Σ_l [ c_l² + 2 c_l r_l + c_l + r_l ] − θ
/// c_l = μ_in,l − μ_out,l
/// r_l = (y − μ_in,l)·1{cell = l} / p_l − (y − μ_out,l)·1{cell ≠ l} / (1 − p_l)
/// ```
pub fn orthogonal_score(
    y: f64,
    cell: usize,
    means_in: &[f64],
    means_out: &[f64],
    propensities: &[f64],
    theta: f64,
) -> Result<f64> {
    let cells = means_in.len();
    if cells < 2 {
        return Err(Error::invalid("the score needs at least two cells"));
    }
    if means_out.len() != cells || propensities.len() != cells {
        return Err(Error::invalid("cell means and propensities must have equal lengths"));
    }
    if cell >= cells {
        return Err(Error::IndexOutOfRange {
            index: cell,
            len: cells,
        });
    }
    let mut total = 0.0;
    for l in 0..cells {
        let p = propensities[l];
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ContractViolation(format!(
                "cell propensity {p} outside (0, 1)"
            )));
        }
        let contrast = means_in[l] - means_out[l];
        let correction = if cell == l {
            (y - means_in[l]) / p
        } else {
            -(y - means_out[l]) / (1.0 - p)
        };
        total += contrast * contrast + 2.0 * contrast * correction + contrast + correction;
    }
    Ok(total - theta)
}

/// Two-sided standard normal p-value.
pub fn two_sided_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Upper-tail standard normal p-value `1 − Φ(z)`.
pub fn upper_p_value(z: f64) -> f64 {
    (0.5 * erfc(z / std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

/// Runs the test and keeps the partition, nuisances and scores.
///
/// `controls` are extra columns entering every nuisance regression next to
/// `Ż`; the implication tested is then `E[Y | Ż, C, Z̃] = E[Y | Ż, C]`.
pub fn dml_test_detailed(
    y: &[f64],
    researcher: &ExposureVector,
    learned: &ExposureVector,
    controls: Vec<Vec<f64>>,
    folds: &FoldScheme,
    options: &TestOptions,
) -> Result<TestRun> {
    let TestOptions {
        cells,
        aggregation,
        alternative,
    } = *options;
    let n = y.len();
    if researcher.len() != n || learned.len() != n {
        return Err(Error::invalid("outcome and exposure lengths differ"));
    }
    if n < 10 * cells {
        return Err(Error::invalid(format!(
            "the test needs n >= 10·L = {}, got {n}",
            10 * cells
        )));
    }
    let partition = quantile_partition(&learned.values, cells)?;
    let regressors = TestRegressors::with_controls(&researcher.values, controls)?;
    let nuisances = fit_test_nuisances(y, &regressors, &partition, folds)?;
    let means = &nuisances.cell_means;
    let score_parts = (0..n)
        .map(|i| {
            orthogonal_score(
                y[i],
                partition.labels()[i],
                means.inside.row(i),
                means.outside.row(i),
                nuisances.cell_propensity.row(i),
                0.0,
            )
        })
        .collect::<Result<Vec<f64>>>()?;

    let fold_score_means: Vec<f64> = (0..folds.folds())
        .map(|k| {
            let idx = folds.test_indices(k);
            idx.iter().map(|&i| score_parts[i]).sum::<f64>() / idx.len().max(1) as f64
        })
        .collect();
    let theta_hat = match aggregation {
        Aggregation::Pooled => score_parts.iter().sum::<f64>() / n as f64,
        Aggregation::FoldAverage => fold_score_means.iter().sum::<f64>() / fold_score_means.len() as f64,
    };
    let variance = score_parts.iter().map(|s| (s - theta_hat).powi(2)).sum::<f64>() / n as f64;
    let std_error = (variance / n as f64).sqrt();
    let (z_stat, p_value) = if std_error > 0.0 {
        let z = theta_hat / std_error;
        (z, alternative.p_value(z))
    } else if theta_hat == 0.0 {
        (0.0, 1.0)
    } else {
        let z = f64::INFINITY.copysign(theta_hat);
        (z, alternative.p_value(z))
    };

    let result = TestResult {
        theta_hat,
        std_error,
        z_stat,
        p_value,
        reject_at_05: p_value < SIGNIFICANCE_LEVEL,
        effective_cells: partition.cells(),
        fold_score_means,
        mean_fallbacks: nuisances.cell_means.fallback_fits,
        propensity_fallbacks: nuisances.propensity_fallbacks,
        aggregation,
        alternative,
    };
    Ok(TestRun {
        result,
        partition,
        nuisances,
        score_parts,
    })
}

/// Tests `H₀: θ = 0` with the pooled estimating equation against `θ > 0`.
pub fn dml_test(
    y: &[f64],
    researcher: &ExposureVector,
    learned: &ExposureVector,
    cells: usize,
    folds: &FoldScheme,
) -> Result<TestResult> {
    let options = TestOptions {
        cells,
        ..TestOptions::default()
    };
    Ok(dml_test_detailed(y, researcher, learned, Vec::new(), folds, &options)?.result)
}

/// A finished test or the reason it could not be carried out.
#[derive(Debug, Clone, PartialEq)]
pub enum TestOutcome {
    Completed(TestResult),
    Inconclusive { reason: String },
}

impl TestOutcome {
    /// Maps a degenerate partition of the learned exposure to an
    /// inconclusive outcome; other errors pass through.
    pub fn from_result(result: Result<TestResult>) -> Result<Self> {
        match result {
            Ok(r) => Ok(TestOutcome::Completed(r)),
            Err(Error::DegeneratePartition(reason)) => Ok(TestOutcome::Inconclusive { reason }),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExposureChoice {
    Researcher,
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub choice: ExposureChoice,
    pub exposure: ExposureVector,
    pub warning: Option<String>,
}

/// Uses the learned exposure when `H₀` is rejected, the researcher's
/// otherwise. An inconclusive test falls back to the learned exposure and
/// carries a warning.
pub fn select_exposure(outcome: &TestOutcome, researcher: &ExposureVector, learned: &ExposureVector) -> Selection {
    match outcome {
        TestOutcome::Completed(r) if r.reject_at_05 => Selection {
            choice: ExposureChoice::Learned,
            exposure: learned.clone(),
            warning: None,
        },
        TestOutcome::Completed(_) => Selection {
            choice: ExposureChoice::Researcher,
            exposure: researcher.clone(),
            warning: None,
        },
        TestOutcome::Inconclusive { reason } => Selection {
            choice: ExposureChoice::Learned,
            exposure: learned.clone(),
            warning: Some(format!("validity test inconclusive ({reason}); using the learned exposure")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::ExposureKind;

    #[test]
    fn score_with_equal_means_and_exact_fit_is_minus_theta() {
        let means = [1.5, 1.5, 1.5];
        let props = [0.2, 0.5, 0.3];
        let s = orthogonal_score(1.5, 1, &means, &means, &props, 0.7).unwrap();
        assert!((s + 0.7).abs() < 1e-15);
    }

    #[test]
    fn score_contract_checks() {
        let m = [0.0, 0.0];
        assert!(matches!(
            orthogonal_score(0.0, 0, &m, &m, &[0.0, 0.5], 0.0),
            Err(Error::ContractViolation(_))
        ));
        assert!(orthogonal_score(0.0, 0, &[0.0], &[0.0], &[0.5], 0.0).is_err());
        assert!(orthogonal_score(0.0, 2, &m, &m, &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn p_value_reference_points() {
        let p = two_sided_p_value(1.959963984540054);
        assert!((p - 0.05).abs() < 1e-10, "{p:e}");
        assert_eq!(two_sided_p_value(0.0), 1.0);
        assert!((two_sided_p_value(-1.0) - two_sided_p_value(1.0)).abs() < 1e-16);
        let p = upper_p_value(1.6448536269514722);
        assert!((p - 0.05).abs() < 1e-10, "{p:e}");
        assert_eq!(upper_p_value(0.0), 0.5);
        assert!((upper_p_value(-2.0) + upper_p_value(2.0) - 1.0).abs() < 1e-15);
        assert_eq!(Alternative::Greater.p_value(f64::INFINITY), 0.0);
        assert_eq!(Alternative::Greater.p_value(f64::NEG_INFINITY), 1.0);
        assert_eq!("two-sided".parse::<Alternative>().unwrap(), Alternative::TwoSided);
        assert!("left".parse::<Alternative>().is_err());
    }

    fn vec_of(values: Vec<f64>, kind: ExposureKind) -> ExposureVector {
        ExposureVector::new(values, kind).unwrap()
    }

    #[test]
    fn selection_rules() {
        let researcher = vec_of(vec![0.0, 1.0], ExposureKind::ResearcherBinary);
        let learned = vec_of(vec![0.3, -0.2], ExposureKind::Learned);
        let base = TestResult {
            theta_hat: 0.0,
            std_error: 1.0,
            z_stat: 0.0,
            p_value: 0.5,
            reject_at_05: false,
            effective_cells: 4,
            fold_score_means: vec![],
            mean_fallbacks: 0,
            propensity_fallbacks: 0,
            aggregation: Aggregation::Pooled,
            alternative: Alternative::Greater,
        };
        let keep = select_exposure(&TestOutcome::Completed(base.clone()), &researcher, &learned);
        assert_eq!(keep.choice, ExposureChoice::Researcher);
        assert_eq!(keep.exposure, researcher);

        let rejected = TestResult {
            p_value: 0.01,
            reject_at_05: true,
            ..base
        };
        let swap = select_exposure(&TestOutcome::Completed(rejected), &researcher, &learned);
        assert_eq!(swap.choice, ExposureChoice::Learned);
        assert!(swap.warning.is_none());

        let unsure = select_exposure(
            &TestOutcome::Inconclusive { reason: "flat".into() },
            &researcher,
            &learned,
        );
        assert_eq!(unsure.choice, ExposureChoice::Learned);
        assert!(unsure.warning.is_some());
    }

    #[test]
    fn degenerate_learned_exposure_is_inconclusive() {
        let n = 60;
        let y: Vec<f64> = (0..n).map(f64::from).collect();
        let researcher = vec_of((0..n).map(|i| f64::from(i % 2)).collect(), ExposureKind::ResearcherBinary);
        let learned = vec_of(vec![0.0; n as usize], ExposureKind::Learned);
        let folds = FoldScheme::new(n as usize, 2, 0).unwrap();
        let outcome = TestOutcome::from_result(dml_test(&y, &researcher, &learned, 4, &folds)).unwrap();
        assert!(matches!(outcome, TestOutcome::Inconclusive { .. }));
    }

    #[test]
    fn too_small_sample_is_rejected() {
        let y = vec![0.0; 30];
        let e = vec_of((0..30).map(f64::from).collect(), ExposureKind::Learned);
        let folds = FoldScheme::new(30, 2, 0).unwrap();
        assert!(dml_test(&y, &e, &e, 4, &folds).is_err());
    }
}
