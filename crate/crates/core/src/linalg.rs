//! Dense kernels shared by the projection and the new-neuron solver. All in
//! double precision.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen, SVD};

/// Columns of every block side by side, followed by a constant-1 column.
pub fn augment_with_bias(blocks: &[&DMatrix<f64>], rows: usize) -> DMatrix<f64> {
    let width: usize = blocks.iter().map(|b| b.ncols()).sum::<usize>() + 1;
    let mut out = DMatrix::zeros(rows, width);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out.column_mut(at).fill(1.0);
    out
}

/// `X^T Y / n`.
pub fn cross_moment(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    x.tr_mul(y) / n
}

/// Absolute ridge for a relative factor: `factor * trace(S) / dim(S)`.
pub fn ridge_for(s: &DMatrix<f64>, factor: f64) -> f64 {
    if s.nrows() == 0 {
        return 0.0;
    }
    factor * s.trace() / s.nrows() as f64
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn eigen_cutoff(values: &[f64], dim: usize) -> f64 {
    let top = values.iter().cloned().fold(0.0f64, f64::max);
    top * dim as f64 * f64::EPSILON
}

/// Solve `(S + ridge I) X = N` for symmetric positive semi-definite `S`.
///
/// A positive ridge goes through Cholesky. A zero ridge yields the
/// minimum-norm solution through the eigen-pseudo-inverse, which gives the
/// exact least-squares projection even for rank-deficient `S`.
pub fn solve_psd(s: &DMatrix<f64>, n: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    check_finite(s, "second-moment matrix")?;
    check_finite(n, "cross-moment matrix")?;
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge must be non-negative, got {ridge}")));
    }
    if ridge > 0.0 {
        let mut reg = s.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        let chol = reg.cholesky().ok_or(Error::SingularCovariance)?;
        return Ok(chol.solve(n));
    }
    if s.iter().all(|&v| v == 0.0) {
        return Err(Error::SingularCovariance);
    }
    let eig = SymmetricEigen::new(s.clone());
    let cut = eigen_cutoff(eig.eigenvalues.as_slice(), s.nrows());
    let q = &eig.eigenvectors;
    let mut proj = q.tr_mul(n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let inv = if l > cut { 1.0 / l } else { 0.0 };
        proj.row_mut(i).scale_mut(inv);
    }
    Ok(q * proj)
}

/// `(S + ridge I)^{-1/2}`, with a pseudo-inverse for null directions.
pub fn inverse_sqrt(s: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    check_finite(s, "second-moment matrix")?;
    let mut reg = s.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += ridge;
    }
    let eig = SymmetricEigen::new(reg);
    let cut = eigen_cutoff(eig.eigenvalues.as_slice(), s.nrows());
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let f = if l > cut { 1.0 / l.sqrt() } else { 0.0 };
        scaled.column_mut(j).scale_mut(f);
    }
    Ok(scaled * q.transpose())
}

/// Thin SVD with singular values sorted in decreasing order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> Result<SortedSvd> {
    check_finite(m, "matrix passed to SVD")?;
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let singular = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), idx.len(), |r, c| u[(r, idx[c])]);
    let v = DMatrix::from_fn(vt.ncols(), idx.len(), |r, c| vt[(idx[c], r)]);
    Ok(SortedSvd { u, singular, v })
}

/// Number of singular values above the usual relative threshold.
pub fn numerical_rank(singular: &[f64], rows: usize, cols: usize) -> usize {
    let top = singular.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    let tol = top * rows.max(cols) as f64 * f64::EPSILON * 16.0;
    singular.iter().filter(|&&s| s > tol).count()
}
