//! Aggregation of replication records into the two study tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{ReplicationRecord, TRUE_DIRECT_EFFECT};
use crate::error::{Error, Result};
use crate::validity_test::SIGNIFICANCE_LEVEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TableKind {
    /// Rejection rate and mean p-value of the validity test.
    Testing,
    /// Mean, standard deviation and mean absolute error of the direct effect.
    DirectEffect,
}

/// One `(setting, n)` cell. Statistics are `None` when every replication
/// of the cell was flagged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub setting: String,
    pub n: usize,
    /// Unflagged replications entering the statistics.
    pub replications: usize,
    pub flagged: usize,
    pub rejection_rate: Option<f64>,
    pub mean_p_value: Option<f64>,
    pub est: Option<f64>,
    pub std: Option<f64>,
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    pub kind: TableKind,
    pub rows: Vec<TableRow>,
    pub base_seed: u64,
    pub config_hash: String,
    /// Not part of the rendered table, which must be reproducible.
    pub wall_time_secs: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `n − 1` divisor; 0 for one value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Groups records by `(setting, n)` and computes the table statistics.
/// Records are ordered by replication index inside each cell first, so the
/// result does not depend on the order they were produced in.
pub fn aggregate(records: &[ReplicationRecord], kind: TableKind) -> Result<TableReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to aggregate"));
    }
    let mut cells: BTreeMap<(String, usize), Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.setting.clone(), r.n)).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(cells.len());
    for ((setting, n), mut members) in cells {
        members.sort_by_key(|r| r.rep);
        let flagged = members.iter().filter(|r| r.is_flagged()).count();
        let ok: Vec<&ReplicationRecord> = members.into_iter().filter(|r| !r.is_flagged()).collect();
        let mut row = TableRow {
            setting,
            n,
            replications: ok.len(),
            flagged,
            rejection_rate: None,
            mean_p_value: None,
            est: None,
            std: None,
            bias: None,
        };
        if !ok.is_empty() {
            match kind {
                TableKind::Testing => {
                    let p: Vec<f64> = ok
                        .iter()
                        .map(|r| r.p_value.ok_or_else(|| Error::invalid("testing record without a p-value")))
                        .collect::<Result<_>>()?;
                    let rejected = p.iter().filter(|&&v| v < SIGNIFICANCE_LEVEL).count();
                    row.rejection_rate = Some(rejected as f64 / p.len() as f64);
                    row.mean_p_value = Some(mean(&p));
                }
                TableKind::DirectEffect => {
                    let est: Vec<f64> = ok
                        .iter()
                        .map(|r| r.estimate.ok_or_else(|| Error::invalid("effect record without an estimate")))
                        .collect::<Result<_>>()?;
                    let abs_err: Vec<f64> = est.iter().map(|e| (e - TRUE_DIRECT_EFFECT).abs()).collect();
                    row.est = Some(mean(&est));
                    row.std = Some(std_dev(&est));
                    row.bias = Some(mean(&abs_err));
                }
            }
        }
        rows.push(row);
    }
    // Natural setting order S1 < S2 < S3 < DIRECT happens to be lexical.
    Ok(TableReport {
        kind,
        rows,
        base_seed: 0,
        config_hash: String::new(),
        wall_time_secs: 0.0,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "missing".to_string(), |x| format!("{x:.3}"))
}

impl TableReport {
    pub fn row(&self, setting: &str, n: usize) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.setting == setting && r.n == n)
    }

    /// Text table in the published layout, followed by the run metadata.
    pub fn render(&self) -> String {
        let mut s = String::new();
        match self.kind {
            TableKind::Testing => {
                let _ = writeln!(s, "Simulation results - testing method");
                let _ = writeln!(
                    s,
                    "{:<8} {:>6} {:>6} {:>8} {:>15} {:>13}",
                    "setting", "n", "reps", "flagged", "rejection rate", "mean p-value"
                );
                for r in &self.rows {
                    let _ = writeln!(
                        s,
                        "{:<8} {:>6} {:>6} {:>8} {:>15} {:>13}",
                        r.setting,
                        r.n,
                        r.replications,
                        r.flagged,
                        cell(r.rejection_rate),
                        cell(r.mean_p_value)
                    );
                }
            }
            TableKind::DirectEffect => {
                let _ = writeln!(s, "Simulation results - direct effect estimation");
                let _ = writeln!(
                    s,
                    "{:<8} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}",
                    "setting", "n", "reps", "flagged", "est", "std", "bias"
                );
                for r in &self.rows {
                    let _ = writeln!(
                        s,
                        "{:<8} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}",
                        r.setting,
                        r.n,
                        r.replications,
                        r.flagged,
                        cell(r.est),
                        cell(r.std),
                        cell(r.bias)
                    );
                }
            }
        }
        let _ = writeln!(s, "base seed {}, config {}", self.base_seed, self.config_hash);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The cells the criterion needs were not part of the run.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub criterion: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl CheckLine {
    fn new(criterion: &str, passed: bool, detail: String) -> Self {
        Self {
            criterion: criterion.to_string(),
            status: if passed { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        }
    }

    fn skipped(criterion: &str, detail: &str) -> Self {
        Self {
            criterion: criterion.to_string(),
            status: CheckStatus::Skipped,
            detail: detail.to_string(),
        }
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }

    pub fn render(&self) -> String {
        let tag = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        format!("{tag} {}: {}", self.criterion, self.detail)
    }
}

/// Rows of one setting over the requested sample sizes; `None` if any is
/// absent or missing its statistic.
fn series(report: &TableReport, setting: &str, ns: &[usize], stat: fn(&TableRow) -> Option<f64>) -> Option<Vec<f64>> {
    ns.iter().map(|&n| report.row(setting, n).and_then(stat)).collect()
}

fn fmt_series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" -> ")
}

/// Size of the test in S1, power trend in S2 and power in S3.
pub fn check_table1(report: &TableReport) -> Vec<CheckLine> {
    let mut out = Vec::new();
    let s1_ns = [500, 1000];
    let name = "S1 size: rejection <= 0.07 and mean p >= 0.5 at n = 500, 1000";
    match (
        series(report, "S1", &s1_ns, |r| r.rejection_rate),
        series(report, "S1", &s1_ns, |r| r.mean_p_value),
    ) {
        (Some(rej), Some(p)) => {
            let ok = rej.iter().all(|&r| r <= 0.07) && p.iter().all(|&v| v >= 0.5);
            out.push(CheckLine::new(
                name,
                ok,
                format!("rejection {}, mean p {}", fmt_series(&rej), fmt_series(&p)),
            ));
        }
        _ => out.push(CheckLine::skipped(name, "S1 cells not run")),
    }

    let s2_ns = [500, 1000, 2000];
    let name = "S2 power: rejection nondecreasing in n and >= 0.75 at n = 2000";
    match series(report, "S2", &s2_ns, |r| r.rejection_rate) {
        Some(rej) => {
            let ok = rej.windows(2).all(|w| w[1] >= w[0]) && rej[2] >= 0.75;
            out.push(CheckLine::new(name, ok, format!("rejection {}", fmt_series(&rej))));
        }
        None => out.push(CheckLine::skipped(name, "S2 cells not run")),
    }

    let name = "S3 power: rejection >= 0.65 at every n";
    let s3: Vec<&TableRow> = report.rows.iter().filter(|r| r.setting == "S3").collect();
    let rates: Option<Vec<f64>> = s3.iter().map(|r| r.rejection_rate).collect();
    match rates {
        Some(rej) if !rej.is_empty() => {
            let ok = rej.iter().all(|&r| r >= 0.65);
            out.push(CheckLine::new(name, ok, format!("rejection {}", fmt_series(&rej))));
        }
        _ => out.push(CheckLine::skipped(name, "S3 cells not run")),
    }
    out
}

/// Mean and spread of the direct effect at n = 1000 and the bias trend.
pub fn check_table2(report: &TableReport) -> Vec<CheckLine> {
    let mut out = Vec::new();
    let name = "direct effect at n = 1000: mean in [0.85, 1.15], s.d. in [0.2, 0.45]";
    match report.row("DIRECT", 1000).and_then(|r| r.est.zip(r.std)) {
        Some((est, std)) => {
            let ok = (0.85..=1.15).contains(&est) && (0.2..=0.45).contains(&std);
            out.push(CheckLine::new(name, ok, format!("mean {est:.3}, s.d. {std:.3}")));
        }
        None => out.push(CheckLine::skipped(name, "n = 1000 not run")),
    }
    let ns = [100, 200, 500, 1000];
    let name = "direct effect bias decreasing over n = 100, 200, 500, 1000";
    match series(report, "DIRECT", &ns, |r| r.bias) {
        Some(b) => {
            let ok = b.windows(2).all(|w| w[1] < w[0]);
            out.push(CheckLine::new(name, ok, format!("bias {}", fmt_series(&b))));
        }
        None => out.push(CheckLine::skipped(name, "not every sample size was run")),
    }
    out
}
