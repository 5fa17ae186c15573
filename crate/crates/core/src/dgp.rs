//! Synthetic populations with network interference.
//!
//! Each draw builds a random geometric graph, a binary covariate `X`, a
//! treatment `D` whose probability depends on `X`, a true exposure computed
//! from the neighbours' `D·X`, and a linear outcome
//! `Y = α + δ·Z + γ·D + ξ·X + ε` with standard normal noise. The noise
//! draws are kept so potential outcomes can be evaluated exactly.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{rgg_generate, second_order_matrix, Graph};
use crate::numerics::logistic;

/// Radius constant of the testing study.
pub const TESTING_RADIUS_CONSTANT: f64 = 30.0;
/// Radius constant of the direct-effect study.
pub const DIRECT_RADIUS_CONSTANT: f64 = 5.0;
/// Exposure threshold of the direct-effect study: exposed when more than
/// this many neighbours have `D·X = 1`.
pub const DIRECT_EXPOSURE_THRESHOLD: usize = 2;

/// True exposure mapping of a simulation setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    /// Share of neighbours with `D·X = 1`.
    S1,
    /// First-order share plus the second-order share.
    S2,
    /// Saturating transform of the count of neighbours with `D·X = 1`.
    S3,
    /// Indicator that more than two neighbours have `D·X = 1`.
    Direct,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::S1, Setting::S2, Setting::S3, Setting::Direct];

    pub fn tag(self) -> &'static str {
        match self {
            Setting::S1 => "S1",
            Setting::S2 => "S2",
            Setting::S3 => "S3",
            Setting::Direct => "DIRECT",
        }
    }

    pub fn default_radius_constant(self) -> f64 {
        match self {
            Setting::Direct => DIRECT_RADIUS_CONSTANT,
            _ => TESTING_RADIUS_CONSTANT,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" | "1" => Ok(Setting::S1),
            "S2" | "2" => Ok(Setting::S2),
            "S3" | "3" => Ok(Setting::S3),
            "DIRECT" | "D" => Ok(Setting::Direct),
            other => Err(Error::Parse(format!("unknown setting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub setting: Setting,
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub xi: f64,
    pub radius_constant: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Coefficients `(α, δ, γ, ξ) = (−1, 5, 1, 1)` with the setting's
    /// radius constant.
    pub fn new(setting: Setting, n: usize, seed: u64) -> Self {
        Self {
            n,
            setting,
            alpha: -1.0,
            delta: 5.0,
            gamma: 1.0,
            xi: 1.0,
            radius_constant: setting.default_radius_constant(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        if !(self.radius_constant > 0.0 && self.radius_constant.is_finite()) {
            return Err(Error::invalid("radius constant must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub y: Vec<f64>,
    pub d: Vec<u8>,
    pub x: Vec<u8>,
    pub z_true: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Delimited export with columns `id,Y,D,X,Z_true`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "id,Y,D,X,Z_true")?;
        for i in 0..self.n() {
            writeln!(
                out,
                "{},{:?},{},{},{:?}",
                i, self.y[i], self.d[i], self.x[i], self.z_true[i]
            )?;
        }
        Ok(())
    }
}

/// `Pr(D = 1 | X = x)` in the simulation design.
pub fn treatment_probability(x: u8) -> f64 {
    logistic(1.0 + 2.0 * f64::from(x))
}

/// Draws a full population. Graph positions are drawn first, then `X`,
/// `D` and the noise, all from `rng`.
pub fn draw_population<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let graph = rgg_generate(n, cfg.radius_constant, rng)?;
    let x: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let d: Vec<u8> = x
        .iter()
        .map(|&xi| u8::from(rng.random::<f64>() < treatment_probability(xi)))
        .collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let z_true = true_exposure(cfg.setting, &graph, &d, &x)?;
    let y = (0..n)
        .map(|i| outcome(cfg, z_true[i], d[i], x[i], noise[i]))
        .collect();
    Ok(Dataset {
        graph,
        y,
        d,
        x,
        z_true,
        noise,
    })
}

/// Draws a population from `cfg.seed`.
pub fn simulate(cfg: &SimConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    draw_population(cfg, &mut rng)
}

#[inline]
fn outcome(cfg: &SimConfig, z: f64, d: u8, x: u8, eps: f64) -> f64 {
    cfg.alpha + cfg.delta * z + cfg.gamma * f64::from(d) + cfg.xi * f64::from(x) + eps
}

pub(crate) fn check_lengths(g: &Graph, d: &[u8], x: &[u8]) -> Result<()> {
    if d.len() != g.n() || x.len() != g.n() {
        return Err(Error::invalid(format!(
            "expected {} treatments and covariates, got {} and {}",
            g.n(),
            d.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Number of neighbours of each node with `D·X = 1`.
pub fn treated_eligible_counts(g: &Graph, d: &[u8], x: &[u8]) -> Vec<usize> {
    (0..g.n())
        .map(|i| {
            g.neighbors(i)
                .iter()
                .filter(|&&j| d[j] == 1 && x[j] == 1)
                .count()
        })
        .collect()
}

/// Share of neighbours with `D·X = 1`; zero for isolated nodes.
pub fn neighbor_share(g: &Graph, d: &[u8], x: &[u8]) -> Vec<f64> {
    treated_eligible_counts(g, d, x)
        .into_iter()
        .enumerate()
        .map(|(i, count)| ratio(count, g.degree(i)))
        .collect()
}

#[inline]
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn true_exposure(setting: Setting, g: &Graph, d: &[u8], x: &[u8]) -> Result<Vec<f64>> {
    check_lengths(g, d, x)?;
    let out = match setting {
        Setting::S1 => neighbor_share(g, d, x),
        Setting::S2 => {
            let first = neighbor_share(g, d, x);
            let second = second_order_matrix(g);
            first
                .into_iter()
                .enumerate()
                .map(|(i, share)| {
                    let (mut num, mut den) = (0usize, 0usize);
                    for k in second.row_indices(i) {
                        den += 1;
                        if d[k] == 1 && x[k] == 1 {
                            num += 1;
                        }
                    }
                    share + ratio(num, den)
                })
                .collect()
        }
        Setting::S3 => treated_eligible_counts(g, d, x)
            .into_iter()
            .map(saturating_exposure)
            .collect(),
        Setting::Direct => treated_eligible_counts(g, d, x)
            .into_iter()
            .map(|count| f64::from(u8::from(count > DIRECT_EXPOSURE_THRESHOLD)))
            .collect(),
    };
    Ok(out)
}

/// `1 − exp(−0.5 · max{0, count − 10})`.
pub fn saturating_exposure(count: usize) -> f64 {
    let excess = (count as f64 - 10.0).max(0.0);
    1.0 - (-0.5 * excess).exp()
}

/// Potential outcome `Y_i(d, z)` under the linear design, reusing the
/// stored noise of unit `i`.
pub fn counterfactual_outcome(cfg: &SimConfig, data: &Dataset, i: usize, d: u8, z: f64) -> Result<f64> {
    if i >= data.n() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: data.n(),
        });
    }
    if d > 1 {
        return Err(Error::invalid(format!("treatment must be 0 or 1, got {d}")));
    }
    Ok(outcome(cfg, z, d, data.x[i], data.noise[i]))
}
