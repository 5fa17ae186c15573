//! Researcher-defined exposure mappings and quantile partitions of
//! continuous exposures.

use std::fmt;
use std::str::FromStr;

use crate::dgp::{check_lengths, neighbor_share, treated_eligible_counts};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExposureKind {
    /// Share of neighbours with `D·X = 1`.
    ResearcherShare,
    /// Indicator that at least one neighbour has `D·X = 1`.
    ResearcherBinary,
    /// Encoder output of a trained graph convolutional autoencoder.
    Learned,
    /// Exposure from the data generating process.
    TrueOracle,
}

impl ExposureKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExposureKind::ResearcherShare => "share",
            ExposureKind::ResearcherBinary => "binary",
            ExposureKind::Learned => "learned",
            ExposureKind::TrueOracle => "true",
        }
    }
}

impl fmt::Display for ExposureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExposureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "share" | "s1" => Ok(ExposureKind::ResearcherShare),
            "binary" | "any" => Ok(ExposureKind::ResearcherBinary),
            "learned" => Ok(ExposureKind::Learned),
            "true" | "oracle" => Ok(ExposureKind::TrueOracle),
            other => Err(Error::Parse(format!("unknown exposure kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureVector {
    pub values: Vec<f64>,
    pub kind: ExposureKind,
}

impl ExposureVector {
    pub fn new(values: Vec<f64>, kind: ExposureKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("exposure values must be finite"));
        }
        Ok(Self { values, kind })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every value is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Evaluates a researcher-defined mapping. Only the two researcher kinds
/// are computable from observed data.
pub fn researcher_exposure(kind: ExposureKind, g: &Graph, d: &[u8], x: &[u8]) -> Result<ExposureVector> {
    check_lengths(g, d, x)?;
    let values = match kind {
        ExposureKind::ResearcherShare => neighbor_share(g, d, x),
        ExposureKind::ResearcherBinary => treated_eligible_counts(g, d, x)
            .into_iter()
            .map(|c| f64::from(u8::from(c > 0)))
            .collect(),
        other => {
            return Err(Error::invalid(format!(
                "'{other}' is not a researcher-defined exposure mapping"
            )))
        }
    };
    ExposureVector::new(values, kind)
}

/// Quantile cells of a continuous exposure.
///
/// Cell `l` (0-based) holds values in `(cuts[l-1], cuts[l]]`, with the
/// first cell unbounded below and the last unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    cuts: Vec<f64>,
    labels: Vec<usize>,
    requested_cells: usize,
}

impl Partition {
    pub fn cells(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn requested_cells(&self) -> usize {
        self.requested_cells
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Cell of an arbitrary value under this partition's cut points.
    pub fn cell_of(&self, value: f64) -> usize {
        self.cuts.partition_point(|&c| c < value)
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cells()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Splits `values` at the empirical `k/L` quantiles (order statistic
/// `⌈k·n/L⌉`). Duplicate cut points are collapsed and cuts that would
/// leave an empty upper cell are dropped, so every cell is non-empty and
/// the effective cell count may be below `cells`.
pub fn quantile_partition(values: &[f64], cells: usize) -> Result<Partition> {
    let n = values.len();
    if cells < 2 {
        return Err(Error::invalid("a partition needs at least two cells"));
    }
    if n < cells {
        return Err(Error::invalid(format!(
            "cannot split {n} observations into {cells} cells"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("partitioned values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted[n - 1];

    let mut cuts: Vec<f64> = Vec::with_capacity(cells - 1);
    for k in 1..cells {
        let rank = (k * n).div_ceil(cells);
        let cut = sorted[rank - 1];
        if cut < max && cuts.last().is_none_or(|&last| cut > last) {
            cuts.push(cut);
        }
    }
    if cuts.is_empty() {
        return Err(Error::DegeneratePartition(format!(
            "all {n} values are identical ({max})"
        )));
    }
    let labels = values
        .iter()
        .map(|&v| cuts.partition_point(|&c| c < v))
        .collect();
    Ok(Partition {
        cuts,
        labels,
        requested_cells: cells,
    })
}

/// Indicator `1(value_i ∈ cell l)` for a 0-based cell index.
pub fn cell_indicator(p: &Partition, cell: usize) -> Result<Vec<u8>> {
    if cell >= p.cells() {
        return Err(Error::IndexOutOfRange {
            index: cell,
            len: p.cells(),
        });
    }
    Ok(p.labels.iter().map(|&l| u8::from(l == cell)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn share_on_star() {
        let g = Graph::star(4);
        let d = [0, 1, 1, 1, 0];
        let x = [0, 1, 1, 0, 1];
        let z = researcher_exposure(ExposureKind::ResearcherShare, &g, &d, &x).unwrap();
        assert_eq!(z.values[0], 0.5);
    }

    #[test]
    fn binary_mapping() {
        let g = Graph::star(4);
        let none = researcher_exposure(ExposureKind::ResearcherBinary, &g, &[0; 5], &[1; 5]).unwrap();
        assert_eq!(none.values[0], 0.0);
        let one = researcher_exposure(ExposureKind::ResearcherBinary, &g, &[0, 1, 0, 0, 0], &[1; 5])
            .unwrap();
        assert_eq!(one.values[0], 1.0);
        assert!(one.is_binary());
    }

    #[test]
    fn non_researcher_kind_is_rejected() {
        let g = Graph::path(2);
        assert!(researcher_exposure(ExposureKind::Learned, &g, &[0, 1], &[1, 1]).is_err());
    }

    #[test]
    fn quartiles_of_one_to_eight() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        let p = quantile_partition(&v, 4).unwrap();
        assert_eq!(p.cuts(), &[2.0, 4.0, 6.0]);
        assert_eq!(p.labels(), &[0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(cell_indicator(&p, 0).unwrap(), vec![1, 1, 0, 0, 0, 0, 0, 0]);
        assert!(cell_indicator(&p, 4).is_err());
    }

    #[test]
    fn median_split_of_symmetric_values() {
        let v = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let p = quantile_partition(&v, 2).unwrap();
        assert_eq!(p.cell_sizes(), vec![3, 3]);
    }

    #[test]
    fn constant_vector_is_degenerate() {
        assert!(matches!(
            quantile_partition(&[1.5; 10], 4),
            Err(Error::DegeneratePartition(_))
        ));
    }

    #[test]
    fn heavy_ties_collapse_cells() {
        // Three quarters of the mass at 0: only one cut survives.
        let mut v = vec![0.0; 9];
        v.extend([1.0, 2.0, 3.0]);
        let p = quantile_partition(&v, 4).unwrap();
        assert_eq!(p.cells(), 2);
        assert_eq!(p.cell_sizes(), vec![9, 3]);

        // Everything but the maximum tied: the surviving cells still cover all.
        let mut v = vec![0.0; 7];
        v.push(1.0);
        let p = quantile_partition(&v, 4).unwrap();
        assert_eq!(p.cells(), 2);
        assert_eq!(cell_indicator(&p, 1).unwrap().iter().map(|&b| b as usize).sum::<usize>(), 1);
    }

    #[test]
    fn bad_arguments() {
        assert!(quantile_partition(&[1.0, 2.0], 1).is_err());
        assert!(quantile_partition(&[1.0, 2.0], 3).is_err());
    }

    proptest! {
        #[test]
        fn exactly_one_indicator_fires(values in prop::collection::vec(-50i32..50, 8..60), cells in 2usize..6) {
            let v: Vec<f64> = values.iter().map(|&x| f64::from(x) / 3.0).collect();
            prop_assume!(v.len() >= cells);
            if let Ok(p) = quantile_partition(&v, cells) {
                let mut total = vec![0u8; v.len()];
                for l in 0..p.cells() {
                    let ind = cell_indicator(&p, l).unwrap();
                    prop_assert!(ind.iter().any(|&b| b == 1), "cell {} empty", l);
                    for (t, b) in total.iter_mut().zip(ind) { *t += b; }
                }
                prop_assert!(total.iter().all(|&t| t == 1));
                prop_assert!(p.cuts().windows(2).all(|w| w[0] < w[1]));
                for (&val, &l) in v.iter().zip(p.labels()) {
                    prop_assert_eq!(p.cell_of(val), l);
                }
            }
        }

        #[test]
        fn distinct_values_give_balanced_cells(k in 1usize..30, cells in 2usize..6, shift in -5.0f64..5.0) {
            let n = k * cells;
            let v: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 + shift).collect();
            let p = quantile_partition(&v, cells).unwrap();
            let sizes = p.cell_sizes();
            prop_assert_eq!(sizes.len(), cells);
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }
}
