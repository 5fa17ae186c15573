//! Monte Carlo replication engine behind the command line tool.
//!
//! A [`RunSpec`] names the command, the settings and sample sizes and the
//! number of replications. Every replication derives its own seed from
//! `(base_seed, setting, n, rep)` so any single record can be re-run in
//! isolation, and records are collected in index order so results do not
//! depend on the worker count.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dgp::{simulate, treatment_probability, Dataset, SimConfig, Setting, DIRECT_EXPOSURE_THRESHOLD};
use crate::effects::{binary_exposure_table, direct_effect_avg, EffectInputs, Method, Weighting};
use crate::error::{Error, Result};
use crate::exposure::{quantile_partition, researcher_exposure, ExposureKind, ExposureVector};
use crate::gca::{learned_exposure, leave_own_out_exposure, train, GcaConfig};
use crate::nuisance::{
    fit_treatment_propensity, oracle_exposure_propensity, own_feature_controls, simulated_cell_propensity, trim,
    CellTable, FoldScheme, DEFAULT_FOLDS,
};
use crate::validity_test::{dml_test_detailed, Aggregation, Alternative, TestOptions, DEFAULT_CELLS};

pub use report::{aggregate, check_table1, check_table2, CheckLine, TableKind, TableReport, TableRow};

/// True direct effect of the simulation design.
pub const TRUE_DIRECT_EFFECT: f64 = 1.0;
/// Largest tolerated share of flagged replications per table cell.
pub const MAX_FLAGGED_SHARE: f64 = 0.05;
/// Treatment redraws behind [`ExposurePropensity::Simulated`].
pub const SIMULATED_PROPENSITY_DRAWS: usize = 200;

/// Exposure propensity used by the direct-effect protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExposurePropensity {
    /// Quantile cells of the learned exposure, each weighted by its sample
    /// share. Under normalised weights the within-cell contrasts then
    /// depend on the treatment propensity alone.
    #[default]
    CellShare,
    /// Quantile cells of the learned exposure, with `Pr(cell | X, A)`
    /// simulated by redrawing treatments from the design.
    Simulated,
    /// The learned exposure cut into two levels at the expected number of
    /// exposed nodes, weighted by the closed-form threshold propensity.
    Threshold,
}

impl std::str::FromStr for ExposurePropensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cell-share" | "share" => Ok(Self::CellShare),
            "simulated" => Ok(Self::Simulated),
            "threshold" | "oracle" => Ok(Self::Threshold),
            other => Err(Error::Parse(format!("unknown exposure propensity '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Command {
    Simulate,
    TestValidity,
    EstimateDirect,
    ReproduceTable1,
    ReproduceTable2,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::TestValidity => "test-validity",
            Command::EstimateDirect => "estimate-direct",
            Command::ReproduceTable1 => "reproduce-table1",
            Command::ReproduceTable2 => "reproduce-table2",
        }
    }

    /// Which replication protocol the command runs, if any.
    pub fn table(self) -> Option<TableKind> {
        match self {
            Command::Simulate => None,
            Command::TestValidity | Command::ReproduceTable1 => Some(TableKind::Testing),
            Command::EstimateDirect | Command::ReproduceTable2 => Some(TableKind::DirectEffect),
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(Command::Simulate),
            "test-validity" => Ok(Command::TestValidity),
            "estimate-direct" => Ok(Command::EstimateDirect),
            "reproduce-table1" => Ok(Command::ReproduceTable1),
            "reproduce-table2" => Ok(Command::ReproduceTable2),
            other => Err(Error::Parse(format!("unknown command '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: Command,
    pub settings: Vec<Setting>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub base_seed: u64,
    pub out: Option<PathBuf>,
    /// Quantile cells of the learned exposure, in the test and in the
    /// direct-effect protocol.
    pub cells: usize,
    /// Cross-fitting folds; `None` uses the default.
    pub folds: Option<usize>,
    pub gca: GcaConfig,
    pub workers: usize,
    pub aggregation: Aggregation,
    pub alternative: Alternative,
    /// Condition the validity test on the node's own treatment and
    /// covariate as well as on `Ż`.
    pub own_feature_controls: bool,
    pub weighting: Weighting,
    pub exposure_propensity: ExposurePropensity,
    pub check: bool,
}

impl RunSpec {
    /// Default design for a command: Table 1 runs S1 to S3 at
    /// n ∈ {500, 1000, 2000}, Table 2 runs DIRECT at n ∈ {100, 200, 500, 1000},
    /// both with 200 replications.
    pub fn for_command(command: Command) -> Self {
        let (settings, n_list) = match command {
            Command::Simulate => (vec![Setting::S1], vec![500]),
            Command::TestValidity | Command::ReproduceTable1 => {
                (vec![Setting::S1, Setting::S2, Setting::S3], vec![500, 1000, 2000])
            }
            Command::EstimateDirect | Command::ReproduceTable2 => (vec![Setting::Direct], vec![100, 200, 500, 1000]),
        };
        Self {
            command,
            settings,
            n_list,
            reps: if command == Command::Simulate { 1 } else { 200 },
            base_seed: 20_250_101,
            out: None,
            cells: DEFAULT_CELLS,
            folds: None,
            gca: GcaConfig::default(),
            workers: 1,
            aggregation: Aggregation::Pooled,
            alternative: Alternative::Greater,
            own_feature_controls: true,
            weighting: Weighting::Normalized,
            exposure_propensity: ExposurePropensity::CellShare,
            check: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("at least one replication is required"));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::invalid("sample sizes must be a nonempty list of positive counts"));
        }
        if self.settings.is_empty() {
            return Err(Error::invalid("no settings selected"));
        }
        if self.cells < 2 {
            return Err(Error::invalid("the test needs at least two cells"));
        }
        if self.folds == Some(0) || self.folds == Some(1) {
            return Err(Error::invalid("cross-fitting needs at least two folds"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        self.gca.validate()?;
        if self.command.table() == Some(TableKind::DirectEffect) && self.settings.iter().any(|&s| s != Setting::Direct) {
            return Err(Error::invalid("direct effect estimation runs on the DIRECT setting only"));
        }
        if self.command.table() == Some(TableKind::Testing) && self.settings.contains(&Setting::Direct) {
            return Err(Error::invalid("the validity test runs on settings S1, S2 and S3"));
        }
        Ok(())
    }

    /// Canonical text form; its hash identifies a configuration.
    pub fn canonical(&self) -> String {
        let settings: Vec<&str> = self.settings.iter().map(|s| s.tag()).collect();
        let n_list: Vec<String> = self.n_list.iter().map(|n| n.to_string()).collect();
        format!(
            "command={} setting={} n={} reps={} seed={} L={} folds={} hidden-width={} lr={:?} epochs={} aggregation={:?} alternative={:?} controls={} weighting={:?} exposure-propensity={:?} standardize={}",
            self.command.name(),
            settings.join(","),
            n_list.join(","),
            self.reps,
            self.base_seed,
            self.cells,
            self.folds.map_or("auto".to_string(), |k| k.to_string()),
            self.gca.encoder_layer_dims[0],
            self.gca.learning_rate,
            self.gca.epochs,
            self.aggregation,
            self.alternative,
            if self.own_feature_controls { "own" } else { "none" },
            self.weighting,
            self.exposure_propensity,
            self.gca.standardize_target,
        )
    }

    /// Hex digest of [`RunSpec::canonical`].
    pub fn config_hash(&self) -> String {
        format!("{:016x}", hash_bytes(self.canonical().as_bytes()))
    }
}

/// Hash built on ChaCha8 as a compression function: each 24-byte chunk is
/// xored into a 32-byte key whose last 8 bytes hold the running state, and
/// the state becomes the first word of the stream under that key.
fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut key = [0u8; 32];
    let mut state = 0u64;
    for chunk in bytes.chunks(24) {
        let mut block = key;
        for (i, b) in chunk.iter().enumerate() {
            block[i] ^= b;
        }
        block[24..].copy_from_slice(&state.to_le_bytes());
        state = ChaCha8Rng::from_seed(block).next_u64();
        key = block;
    }
    key[24..].copy_from_slice(&(state ^ bytes.len() as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key).next_u64()
}

/// Seed of one replication: the keyed hash of
/// `"<base_seed>/<setting>/<n>/<rep>"`.
pub fn replication_seed(base_seed: u64, setting: Setting, n: usize, rep: usize) -> u64 {
    hash_bytes(format!("{base_seed}/{}/{n}/{rep}", setting.tag()).as_bytes())
}

/// Seed of a named stream within a replication.
fn stream_seed(seed: u64, stream: &str) -> u64 {
    hash_bytes(format!("{seed}/{stream}").as_bytes())
}

/// One replication's outcome. Test fields are filled by the testing
/// protocol, effect fields by the direct-effect protocol; `flag` is set
/// when the replication failed and is excluded from the table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub setting: String,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub theta_hat: Option<f64>,
    pub std_error: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    #[serde(rename = "effective_L")]
    pub effective_cells: Option<usize>,
    pub estimand: Option<String>,
    pub method: Option<String>,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub dropped_levels: Vec<usize>,
    pub flag: Option<String>,
}

impl ReplicationRecord {
    fn empty(setting: Setting, n: usize, rep: usize, seed: u64) -> Self {
        Self {
            setting: setting.tag().to_string(),
            n,
            rep,
            seed,
            theta_hat: None,
            std_error: None,
            p_value: None,
            reject: None,
            effective_cells: None,
            estimand: None,
            method: None,
            estimate: None,
            se: None,
            dropped_levels: Vec::new(),
            flag: None,
        }
    }

    pub fn is_flagged(&self) -> bool {
        self.flag.is_some()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records serialise")
    }
}

/// Researcher-defined mapping paired with each testing setting: the
/// neighbour share in S1 and S3, the any-treated-neighbour indicator in S2.
pub fn researcher_kind(setting: Setting) -> ExposureKind {
    match setting {
        Setting::S2 => ExposureKind::ResearcherBinary,
        _ => ExposureKind::ResearcherShare,
    }
}

fn gca_config(spec: &RunSpec, seed: u64) -> GcaConfig {
    GcaConfig {
        seed: stream_seed(seed, "gca"),
        ..spec.gca.clone()
    }
}

fn folds_for(spec: &RunSpec, n: usize, seed: u64) -> Result<FoldScheme> {
    FoldScheme::new(n, spec.folds.unwrap_or(DEFAULT_FOLDS), stream_seed(seed, "folds"))
}

/// Errors that mark a replication as flagged rather than aborting the run.
fn is_recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::DegeneratePartition(_) | Error::TrainingDivergence { .. } | Error::EmptyCell { .. }
    )
}

/// Draws the data of one replication.
pub fn replication_data(spec: &RunSpec, setting: Setting, n: usize, rep: usize) -> Result<Dataset> {
    let seed = replication_seed(spec.base_seed, setting, n, rep);
    simulate(&SimConfig::new(setting, n, stream_seed(seed, "data")))
}

/// Runs one replication of the command's protocol.
pub fn run_replication(spec: &RunSpec, setting: Setting, n: usize, rep: usize) -> Result<ReplicationRecord> {
    let seed = replication_seed(spec.base_seed, setting, n, rep);
    let mut record = ReplicationRecord::empty(setting, n, rep, seed);
    let data = replication_data(spec, setting, n, rep)?;
    let outcome = match spec.command.table() {
        Some(TableKind::Testing) => testing_replication(spec, setting, &data, seed, &mut record),
        Some(TableKind::DirectEffect) => direct_replication(spec, &data, seed, &mut record),
        None => return Err(Error::invalid("the simulate command has no replication protocol")),
    };
    match outcome {
        Ok(()) => Ok(record),
        Err(e) if is_recoverable(&e) => {
            record.flag = Some(e.to_string());
            Ok(record)
        }
        Err(e) => Err(e),
    }
}

fn testing_replication(
    spec: &RunSpec,
    setting: Setting,
    data: &Dataset,
    seed: u64,
    record: &mut ReplicationRecord,
) -> Result<()> {
    let researcher = researcher_exposure(researcher_kind(setting), &data.graph, &data.d, &data.x)?;
    let model = train(&data.graph, &data.d, &data.x, &data.y, &gca_config(spec, seed))?;
    let learned = learned_exposure(&model, &data.graph, &data.d, &data.x)?;
    let folds = folds_for(spec, data.n(), seed)?;
    let controls = if spec.own_feature_controls {
        own_feature_controls(&data.d, &data.x)
    } else {
        Vec::new()
    };
    let options = TestOptions {
        cells: spec.cells,
        aggregation: spec.aggregation,
        alternative: spec.alternative,
    };
    let run = dml_test_detailed(&data.y, &researcher, &learned, controls, &folds, &options)?;
    let r = run.result;
    record.theta_hat = Some(r.theta_hat);
    record.std_error = Some(r.std_error);
    record.p_value = Some(r.p_value);
    record.reject = Some(r.reject_at_05);
    record.effective_cells = Some(r.effective_cells);
    Ok(())
}

/// Binary exposure labels from the learned exposure: the `k` nodes with the
/// largest oriented embedding are labelled exposed, `k` being the expected
/// number of exposed nodes under the oracle propensity. The orientation is
/// the sign of the decoder weight, so "exposed" is the side the model
/// associates with higher outcomes.
pub fn binarize_learned(learned: &ExposureVector, decoder_weight: f64, prob_exposed: &[f64]) -> Result<Vec<usize>> {
    let n = learned.len();
    if prob_exposed.len() != n {
        return Err(Error::invalid("propensity length differs from exposure length"));
    }
    let sign = if decoder_weight < 0.0 { -1.0 } else { 1.0 };
    let oriented: Vec<f64> = learned.values.iter().map(|v| sign * v).collect();
    let expected: f64 = prob_exposed.iter().sum();
    let k = (expected.round() as usize).min(n);
    if k == 0 {
        return Ok(vec![0; n]);
    }
    let mut sorted = oriented.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    Ok(oriented.iter().map(|&v| usize::from(v >= threshold)).collect())
}

fn direct_replication(spec: &RunSpec, data: &Dataset, seed: u64, record: &mut ReplicationRecord) -> Result<()> {
    let model = train(&data.graph, &data.d, &data.x, &data.y, &gca_config(spec, seed))?;
    // the own row would carry D_i into the exposure and absorb the effect
    let learned = leave_own_out_exposure(&model, &data.graph, &data.d, &data.x)?;
    let (labels, levels, table) = match spec.exposure_propensity {
        ExposurePropensity::Threshold => {
            let oracle = oracle_exposure_propensity(&data.graph, &data.x, DIRECT_EXPOSURE_THRESHOLD)?;
            let labels = binarize_learned(&learned, model.decoder_weight, &oracle)?;
            let trimmed: Vec<f64> = oracle.iter().map(|&p| trim(p)).collect();
            (labels, 2, binary_exposure_table(&trimmed))
        }
        ExposurePropensity::CellShare | ExposurePropensity::Simulated => {
            let partition = quantile_partition(&learned.values, spec.cells)?;
            let levels = partition.cells();
            let table = if spec.exposure_propensity == ExposurePropensity::Simulated {
                let mut t = simulated_cell_propensity(
                    &data.x,
                    &partition,
                    treatment_probability,
                    |d| Ok(leave_own_out_exposure(&model, &data.graph, d, &data.x)?.values),
                    SIMULATED_PROPENSITY_DRAWS,
                    stream_seed(seed, "exposure-draws"),
                )?;
                for i in 0..t.n() {
                    for l in 0..levels {
                        t.set(i, l, trim(t.get(i, l)));
                    }
                }
                t
            } else {
                let sizes = partition.cell_sizes();
                let mut t = CellTable::zeros(data.n(), levels);
                for i in 0..data.n() {
                    for (l, &size) in sizes.iter().enumerate() {
                        t.set(i, l, size as f64 / data.n() as f64);
                    }
                }
                t
            };
            (partition.labels().to_vec(), levels, table)
        }
    };
    let folds = folds_for(spec, data.n(), seed)?;
    let treatment_prop = fit_treatment_propensity(&data.d, &data.x, &folds)?;
    let inputs = EffectInputs {
        y: &data.y,
        d: &data.d,
        exposure: &labels,
        levels,
        treatment_prop: &treatment_prop,
        exposure_prop: &table,
        outcome_model: None,
    };
    let report = direct_effect_avg(&inputs, Method::Ipw, spec.weighting)?;
    record.estimand = Some(report.estimate.estimand.to_string());
    record.method = Some("ipw".to_string());
    record.estimate = Some(report.estimate.estimate);
    record.se = Some(report.estimate.std_error);
    record.dropped_levels = report.dropped_levels;
    Ok(())
}

/// Runs every replication of the spec on a pool of `spec.workers` threads.
/// Records come back ordered by setting, sample size and replication.
pub fn run_all(spec: &RunSpec) -> Result<Vec<ReplicationRecord>> {
    spec.validate()?;
    let jobs: Vec<(Setting, usize, usize)> = spec
        .settings
        .iter()
        .flat_map(|&s| spec.n_list.iter().flat_map(move |&n| (0..spec.reps).map(move |r| (s, n, r))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(s, n, r)| run_replication(spec, s, n, r))
            .collect()
    })
}

/// Writes one JSON object per line.
pub fn records_to_jsonl(records: &[ReplicationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json());
        out.push('\n');
    }
    out
}

/// Result of a table command.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<ReplicationRecord>,
    pub report: TableReport,
    pub checks: Vec<CheckLine>,
}

/// Runs a table command end to end: replications, aggregation and, for the
/// reproduce commands, the acceptance checks.
pub fn run_table(spec: &RunSpec) -> Result<RunOutput> {
    let kind = spec
        .command
        .table()
        .ok_or_else(|| Error::invalid("the simulate command produces no table"))?;
    let started = std::time::Instant::now();
    let records = run_all(spec)?;
    let mut report = aggregate(&records, kind)?;
    report.base_seed = spec.base_seed;
    report.config_hash = spec.config_hash();
    report.wall_time_secs = started.elapsed().as_secs_f64();
    for row in &report.rows {
        let share = row.flagged as f64 / (row.replications + row.flagged) as f64;
        if share >= MAX_FLAGGED_SHARE {
            return Err(Error::ContractViolation(format!(
                "{} of {} replications flagged for {} n={}",
                row.flagged,
                row.replications + row.flagged,
                row.setting,
                row.n
            )));
        }
    }
    let checks = match kind {
        TableKind::Testing => check_table1(&report),
        TableKind::DirectEffect => check_table2(&report),
    };
    Ok(RunOutput { records, report, checks })
}

/// Writes `records.jsonl` and `table.txt` into `dir`.
pub fn write_outputs(dir: &Path, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("records.jsonl"), records_to_jsonl(&output.records))?;
    fs::write(dir.join("table.txt"), output.report.render())?;
    Ok(())
}

/// Simulates one dataset per setting, sample size and replication and
/// writes `<setting>_n<n>_rep<r>.csv` plus a matching `.edges` file.
pub fn write_simulations(spec: &RunSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &setting in &spec.settings {
        for &n in &spec.n_list {
            for rep in 0..spec.reps {
                let data = replication_data(spec, setting, n, rep)?;
                let stem = format!("{}_n{n}_rep{rep}", setting.tag());
                let csv = dir.join(format!("{stem}.csv"));
                data.write_csv(fs::File::create(&csv)?)?;
                let edges = dir.join(format!("{stem}.edges"));
                data.graph.write_edge_list(fs::File::create(&edges)?)?;
                written.push(csv);
                written.push(edges);
            }
        }
    }
    Ok(written)
}

pub use config::{apply_option, parse_config};
