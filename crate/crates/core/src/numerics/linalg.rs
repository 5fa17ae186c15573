//! Small dense solvers used by the nuisance regressions.

use super::matrix::RealMatrix;
use crate::error::{Error, Result};

/// Relative column norm below which a column is treated as collinear with
/// the preceding ones and gets a zero coefficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Ordinary least squares via modified Gram-Schmidt with column dropping.
///
/// Rank-deficient designs are handled by zeroing the coefficients of the
/// dependent columns, which gives the same fitted values as any other
/// least-squares solution.
pub fn least_squares(design: &RealMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::ShapeMismatch {
            op: "least_squares",
            left: design.shape(),
            right: (y.len(), 1),
        });
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut kept: Vec<usize> = Vec::with_capacity(p);
    // r[k][j] for kept column k (row) and original column j.
    let mut r = vec![vec![0.0; p]; p];

    for j in 0..p {
        let mut v: Vec<f64> = (0..n).map(|i| design.get(i, j)).collect();
        let original_norm = norm(&v);
        for (k, qk) in q.iter().enumerate() {
            let proj = dot(qk, &v);
            r[k][j] = proj;
            for (vi, qi) in v.iter_mut().zip(qk) {
                *vi -= proj * qi;
            }
        }
        let rem = norm(&v);
        if original_norm == 0.0 || rem <= RANK_TOLERANCE * original_norm.max(1.0) {
            continue;
        }
        r[q.len()][j] = rem;
        v.iter_mut().for_each(|vi| *vi /= rem);
        q.push(v);
        kept.push(j);
    }

    // Back substitution on the kept columns.
    let qty: Vec<f64> = q.iter().map(|qk| dot(qk, y)).collect();
    let m = kept.len();
    let mut coef_kept = vec![0.0; m];
    for k in (0..m).rev() {
        let mut acc = qty[k];
        for l in k + 1..m {
            acc -= r[k][kept[l]] * coef_kept[l];
        }
        coef_kept[k] = acc / r[k][kept[k]];
    }
    let mut beta = vec![0.0; p];
    for (k, &j) in kept.iter().enumerate() {
        beta[j] = coef_kept[k];
    }
    Ok(beta)
}

/// Indices of a maximal set of linearly independent columns, scanning left
/// to right.
pub fn independent_columns(design: &RealMatrix) -> Vec<usize> {
    let (n, p) = design.shape();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut kept = Vec::with_capacity(p);
    for j in 0..p {
        let mut v: Vec<f64> = (0..n).map(|i| design.get(i, j)).collect();
        let original_norm = norm(&v);
        for qk in &q {
            let proj = dot(qk, &v);
            for (vi, qi) in v.iter_mut().zip(qk) {
                *vi -= proj * qi;
            }
        }
        let rem = norm(&v);
        if original_norm == 0.0 || rem <= RANK_TOLERANCE * original_norm.max(1.0) {
            continue;
        }
        v.iter_mut().for_each(|vi| *vi /= rem);
        q.push(v);
        kept.push(j);
    }
    kept
}

/// Solves the symmetric positive definite system `a x = b` by Cholesky.
/// Returns `None` when `a` is not numerically positive definite.
pub fn cholesky_solve(a: &RealMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return None;
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-14 * a.get(i, i).abs().max(1e-300) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
