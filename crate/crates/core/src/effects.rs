//! Mean potential outcomes and direct, interference and total effects for
//! discrete exposures, by inverse probability weighting and the doubly
//! robust score.
//!
//! Standard errors use the i.i.d. influence-function variance
//! `sqrt(mean(ψ²) / n)`.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nuisance::{CellTable, OutcomeModel};

const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Estimand {
    MeanPotentialOutcome { d: u8, z: usize },
    DirectEffect { z: usize },
    InterferenceEffect { d: u8, z: usize, z_alt: usize },
    TotalEffect { z: usize, z_alt: usize },
    AverageDirectEffect,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Estimand::MeanPotentialOutcome { d, z } => write!(f, "E[Y({d},{z})]"),
            Estimand::DirectEffect { z } => write!(f, "gamma({z})"),
            Estimand::InterferenceEffect { d, z, z_alt } => write!(f, "delta({d},{z},{z_alt})"),
            Estimand::TotalEffect { z, z_alt } => write!(f, "Delta({z},{z_alt})"),
            Estimand::AverageDirectEffect => write!(f, "gamma"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Method {
    #[default]
    Ipw,
    Dr,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipw" => Ok(Method::Ipw),
            "dr" | "aipw" => Ok(Method::Dr),
            other => Err(Error::Parse(format!("unknown estimation method '{other}'"))),
        }
    }
}

/// Normalisation of the inverse-probability weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Weighting {
    /// Weights divided by `n` (Horvitz–Thompson).
    #[default]
    HorvitzThompson,
    /// Weights divided by their own sum within the `(d, z)` cell (Hájek).
    Normalized,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ht" | "horvitz-thompson" => Ok(Weighting::HorvitzThompson),
            "hajek" | "normalized" => Ok(Weighting::Normalized),
            other => Err(Error::Parse(format!("unknown weighting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub method: Method,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_95: (f64, f64),
}

impl EffectEstimate {
    fn new(estimand: Estimand, method: Method, estimate: f64, std_error: f64) -> Self {
        Self {
            estimand,
            method,
            estimate,
            std_error,
            ci_95: (estimate - Z_95 * std_error, estimate + Z_95 * std_error),
        }
    }
}

/// Point estimate with its centred influence values.
#[derive(Debug, Clone, PartialEq)]
struct Scored {
    estimate: f64,
    influence: Vec<f64>,
}

impl Scored {
    fn std_error(&self) -> f64 {
        let n = self.influence.len() as f64;
        (self.influence.iter().map(|v| v * v).sum::<f64>() / n).sqrt() / n.sqrt()
    }

    fn minus(&self, other: &Scored) -> Scored {
        Scored {
            estimate: self.estimate - other.estimate,
            influence: self
                .influence
                .iter()
                .zip(&other.influence)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    fn into_estimate(self, estimand: Estimand, method: Method) -> EffectEstimate {
        let se = self.std_error();
        EffectEstimate::new(estimand, method, self.estimate, se)
    }
}

fn check_factor(values: &[f64], what: &str) -> Result<()> {
    if let Some(bad) = values.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::ContractViolation(format!("{what} {bad} outside (0, 1)")));
    }
    Ok(())
}

/// `p_i(d, z) = Pr(D = d | X) · Pr(Z = z | X₋ᵢ, A)` for a binary exposure,
/// given `Pr(D = 1 | X)` and `Pr(Z = 1 | ·)`.
pub fn joint_propensity(d: u8, z: u8, treatment_prop: &[f64], exposure_prop: &[f64]) -> Result<Vec<f64>> {
    if z > 1 {
        return Err(Error::invalid("binary exposure level must be 0 or 1"));
    }
    let level: Vec<f64> = exposure_prop
        .iter()
        .map(|&p| if z == 1 { p } else { 1.0 - p })
        .collect();
    check_factor(exposure_prop, "exposure propensity")?;
    joint_propensity_for_level(d, treatment_prop, &level)
}

/// `Pr(D = d | X) · level_prop` where `level_prop` already is
/// `Pr(Z = z | ·)` for the level of interest.
pub fn joint_propensity_for_level(d: u8, treatment_prop: &[f64], level_prop: &[f64]) -> Result<Vec<f64>> {
    if d > 1 {
        return Err(Error::invalid("treatment must be 0 or 1"));
    }
    if treatment_prop.len() != level_prop.len() {
        return Err(Error::invalid("propensity factors have different lengths"));
    }
    check_factor(treatment_prop, "treatment propensity")?;
    check_factor(level_prop, "exposure propensity")?;
    Ok(treatment_prop
        .iter()
        .zip(level_prop)
        .map(|(&pd, &pz)| if d == 1 { pd } else { 1.0 - pd } * pz)
        .collect())
}

fn check_inputs(y: &[f64], d: &[u8], z: &[usize], p: &[f64]) -> Result<()> {
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("no observations"));
    }
    if d.len() != n || z.len() != n || p.len() != n {
        return Err(Error::invalid("outcome, treatment, exposure and propensity lengths differ"));
    }
    if let Some(bad) = p.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::ContractViolation(format!("propensity {bad} must be positive")));
    }
    Ok(())
}

fn score_mean_po(
    y: &[f64],
    d: &[u8],
    z: &[usize],
    d_val: u8,
    z_val: usize,
    p: &[f64],
    mu: Option<&[f64]>,
    weighting: Weighting,
) -> Result<Scored> {
    check_inputs(y, d, z, p)?;
    let n = y.len();
    if let Some(m) = mu {
        if m.len() != n {
            return Err(Error::invalid("outcome model length differs"));
        }
    }
    let in_cell = |i: usize| d[i] == d_val && z[i] == z_val;
    if !(0..n).any(in_cell) {
        return Err(Error::EmptyCell { d: d_val, z: z_val });
    }
    let mu_at = |i: usize| mu.map_or(0.0, |m| m[i]);
    let weights: Vec<f64> = (0..n).map(|i| if in_cell(i) { 1.0 / p[i] } else { 0.0 }).collect();

    let phi: Vec<f64> = match weighting {
        Weighting::HorvitzThompson => (0..n)
            .map(|i| mu_at(i) + weights[i] * (y[i] - mu_at(i)))
            .collect(),
        Weighting::Normalized => {
            let mean_w = weights.iter().sum::<f64>() / n as f64;
            let resid_mean = (0..n).map(|i| weights[i] * (y[i] - mu_at(i))).sum::<f64>()
                / weights.iter().sum::<f64>();
            // Linearisation of the ratio estimator.
            (0..n)
                .map(|i| mu_at(i) + resid_mean + weights[i] * (y[i] - mu_at(i) - resid_mean) / mean_w)
                .collect()
        }
    };
    let estimate = phi.iter().sum::<f64>() / n as f64;
    Ok(Scored {
        estimate,
        influence: phi.iter().map(|v| v - estimate).collect(),
    })
}

/// `E[Y(d, z)]` by inverse probability weighting:
/// the sample mean of `Y·1{D = d, Z = z} / p(d, z)`.
pub fn ipw_mean_po(y: &[f64], d: &[u8], z: &[usize], d_val: u8, z_val: usize, p: &[f64]) -> Result<EffectEstimate> {
    Ok(score_mean_po(y, d, z, d_val, z_val, p, None, Weighting::HorvitzThompson)?
        .into_estimate(Estimand::MeanPotentialOutcome { d: d_val, z: z_val }, Method::Ipw))
}

/// `E[Y(d, z)]` from the doubly robust score
/// `μ(d, z, x) + 1{D = d, Z = z} / p(d, z) · (Y − μ(d, z, x))`.
pub fn dr_mean_po(
    y: &[f64],
    d: &[u8],
    z: &[usize],
    d_val: u8,
    z_val: usize,
    p: &[f64],
    mu: &[f64],
) -> Result<EffectEstimate> {
    Ok(score_mean_po(y, d, z, d_val, z_val, p, Some(mu), Weighting::HorvitzThompson)?
        .into_estimate(Estimand::MeanPotentialOutcome { d: d_val, z: z_val }, Method::Dr))
}

/// Observed data and fitted nuisances for a discrete exposure.
#[derive(Debug, Clone, Copy)]
pub struct EffectInputs<'a> {
    pub y: &'a [f64],
    pub d: &'a [u8],
    /// Exposure level of each observation, in `0..levels`.
    pub exposure: &'a [usize],
    pub levels: usize,
    /// `Pr(D = 1 | X)`.
    pub treatment_prop: &'a [f64],
    /// `Pr(Z = z | X₋ᵢ, A)` per observation and level.
    pub exposure_prop: &'a CellTable,
    /// Required for [`Method::Dr`].
    pub outcome_model: Option<&'a OutcomeModel>,
}

impl EffectInputs<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.d.len() != n || self.exposure.len() != n || self.treatment_prop.len() != n {
            return Err(Error::invalid("effect inputs have different lengths"));
        }
        if self.exposure_prop.n() != n || self.exposure_prop.cells() != self.levels {
            return Err(Error::invalid("exposure propensity table has the wrong shape"));
        }
        if self.exposure.iter().any(|&z| z >= self.levels) {
            return Err(Error::invalid("exposure level out of range"));
        }
        if let Some(m) = self.outcome_model {
            if m.levels() != self.levels {
                return Err(Error::invalid("outcome model levels differ from exposure levels"));
            }
        }
        Ok(())
    }

    fn score(&self, d_val: u8, z_val: usize, method: Method, weighting: Weighting) -> Result<Scored> {
        let level_prop: Vec<f64> = (0..self.y.len()).map(|i| self.exposure_prop.get(i, z_val)).collect();
        let p = joint_propensity_for_level(d_val, self.treatment_prop, &level_prop)?;
        let mu = match method {
            Method::Ipw => None,
            Method::Dr => Some(
                self.outcome_model
                    .ok_or_else(|| Error::invalid("doubly robust estimation needs an outcome model"))?
                    .column(d_val, z_val),
            ),
        };
        score_mean_po(self.y, self.d, self.exposure, d_val, z_val, &p, mu.as_deref(), weighting)
    }
}

pub fn mean_potential_outcome(
    inputs: &EffectInputs<'_>,
    d: u8,
    z: usize,
    method: Method,
    weighting: Weighting,
) -> Result<EffectEstimate> {
    inputs.validate()?;
    Ok(inputs
        .score(d, z, method, weighting)?
        .into_estimate(Estimand::MeanPotentialOutcome { d, z }, method))
}

/// `γ(z) = E[Y(1, z)] − E[Y(0, z)]`.
pub fn direct_effect(inputs: &EffectInputs<'_>, z: usize, method: Method, weighting: Weighting) -> Result<EffectEstimate> {
    inputs.validate()?;
    let treated = inputs.score(1, z, method, weighting)?;
    let control = inputs.score(0, z, method, weighting)?;
    Ok(treated.minus(&control).into_estimate(Estimand::DirectEffect { z }, method))
}

/// `δ(d, z, z') = E[Y(d, z)] − E[Y(d, z')]`.
pub fn interference_effect(
    inputs: &EffectInputs<'_>,
    d: u8,
    z: usize,
    z_alt: usize,
    method: Method,
    weighting: Weighting,
) -> Result<EffectEstimate> {
    inputs.validate()?;
    let a = inputs.score(d, z, method, weighting)?;
    let b = inputs.score(d, z_alt, method, weighting)?;
    Ok(a.minus(&b).into_estimate(Estimand::InterferenceEffect { d, z, z_alt }, method))
}

/// `Δ(z, z') = E[Y(1, z)] − E[Y(0, z')]`.
pub fn total_effect(
    inputs: &EffectInputs<'_>,
    z: usize,
    z_alt: usize,
    method: Method,
    weighting: Weighting,
) -> Result<EffectEstimate> {
    inputs.validate()?;
    let a = inputs.score(1, z, method, weighting)?;
    let b = inputs.score(0, z_alt, method, weighting)?;
    Ok(a.minus(&b).into_estimate(Estimand::TotalEffect { z, z_alt }, method))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelEffect {
    pub level: usize,
    pub weight: f64,
    pub effect: EffectEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectEffectReport {
    pub estimate: EffectEstimate,
    pub per_level: Vec<LevelEffect>,
    /// Levels without both treated and untreated observations; their weight
    /// is redistributed over the remaining levels.
    pub dropped_levels: Vec<usize>,
}

/// `γ = Σ_z w_z γ(z)` with `w_z` the empirical share of exposure level `z`.
pub fn direct_effect_avg(inputs: &EffectInputs<'_>, method: Method, weighting: Weighting) -> Result<DirectEffectReport> {
    inputs.validate()?;
    let n = inputs.y.len();
    let mut kept: Vec<(usize, Scored)> = Vec::new();
    let mut dropped = Vec::new();
    for z in 0..inputs.levels {
        let present = |dv: u8| (0..n).any(|i| inputs.d[i] == dv && inputs.exposure[i] == z);
        if !(present(0) && present(1)) {
            dropped.push(z);
            continue;
        }
        let treated = inputs.score(1, z, method, weighting)?;
        let control = inputs.score(0, z, method, weighting)?;
        kept.push((z, treated.minus(&control)));
    }
    if kept.is_empty() {
        return Err(Error::EmptyCell { d: 0, z: 0 });
    }
    let counts: Vec<usize> = kept
        .iter()
        .map(|(z, _)| inputs.exposure.iter().filter(|&&e| e == *z).count())
        .collect();
    let kept_total: usize = counts.iter().sum();
    let kept_share = kept_total as f64 / n as f64;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / kept_total as f64).collect();

    let estimate: f64 = kept.iter().zip(&weights).map(|((_, s), w)| w * s.estimate).sum();
    let is_kept = |level: usize| kept.iter().any(|(z, _)| *z == level);
    let influence: Vec<f64> = (0..n)
        .map(|i| {
            let level = inputs.exposure[i];
            kept.iter()
                .zip(&weights)
                .map(|((z, s), &w)| {
                    let share_term = if is_kept(level) {
                        (f64::from(u8::from(level == *z)) - w) / kept_share
                    } else {
                        0.0
                    };
                    w * s.influence[i] + share_term * s.estimate
                })
                .sum()
        })
        .collect();
    let combined = Scored { estimate, influence };
    let per_level = kept
        .into_iter()
        .zip(&weights)
        .map(|((z, s), &w)| LevelEffect {
            level: z,
            weight: w,
            effect: s.into_estimate(Estimand::DirectEffect { z }, method),
        })
        .collect();
    Ok(DirectEffectReport {
        estimate: combined.into_estimate(Estimand::AverageDirectEffect, method),
        per_level,
        dropped_levels: dropped,
    })
}

/// `n × 2` table `[1 − p, p]` for a binary exposure with `Pr(Z = 1) = p`.
pub fn binary_exposure_table(prob_exposed: &[f64]) -> CellTable {
    let mut t = CellTable::zeros(prob_exposed.len(), 2);
    for (i, &p) in prob_exposed.iter().enumerate() {
        t.set(i, 0, 1.0 - p);
        t.set(i, 1, p);
    }
    t
}
