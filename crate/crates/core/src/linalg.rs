//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{DpdError, Result};

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric positive semi-definite matrix; tiny negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    &vecs * d * vecs.transpose()
}

/// 2-norm condition number of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    let max = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = vals.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    match sym.clone().cholesky() {
        Some(ch) => Ok(symmetrize(&ch.inverse())),
        None => Err(DpdError::Singular {
            what: what.to_string(),
            cond: condition_number(&sym),
        }),
    }
}

/// Inverse of a general square matrix.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let cond = {
        let sv = m.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    };
    if !cond.is_finite() || cond > 1e15 {
        return Err(DpdError::Singular {
            what: what.to_string(),
            cond,
        });
    }
    m.clone().try_inverse().ok_or_else(|| DpdError::Singular {
        what: what.to_string(),
        cond,
    })
}

/// Numerical rank using singular values relative to the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Orthonormal basis (columns) of the null space of `lᵀ`, where `l` is p×r of
/// full column rank.
pub fn null_space_of_transpose(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.nrows();
    let r = l.ncols();
    if r == 0 {
        return DMatrix::identity(p, p);
    }
    let qr = l.clone().qr();
    let q = qr.q();
    let proj = DMatrix::identity(p, p) - &q * q.transpose();
    let (_, vecs) = sym_eigen(&proj);
    vecs.columns(0, p - r).into_owned()
}

/// Least-squares solution of `x b = y` via SVD.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    svd.solve(y, tol)
        .map_err(|e| DpdError::Invalid(format!("least squares failed: {e}")))
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        cols.push((f(&xp)? - f(&xm)?) / (2.0 * h));
    }
    let m = cols[0].len();
    let mut jac = DMatrix::zeros(m, n);
    for (j, c) in cols.iter().enumerate() {
        jac.set_column(j, c);
    }
    Ok(jac)
}
