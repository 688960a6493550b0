//! Dense symmetric linear algebra: cyclic Jacobi eigensolver and the matrix
//! functions built on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{RdpError, Result};

const MAX_SWEEPS: usize = 100;
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Largest `|m_ij - m_ji|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(RdpError::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if m.nrows() == 0 {
        return Err(RdpError::InvalidInput("matrix must be at least 1x1".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RdpError::InvalidInput("matrix entries must be finite".into()));
    }
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(RdpError::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(V, lambda)` with eigenvalues sorted in descending order and the
/// matching eigenvectors as the columns of `V`. Only the symmetric part of the
/// input is used.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_symmetric(m)?;
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);

    let total = a.norm();
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    if off_diagonal_norm(&a) > 1e-10 * total.max(f64::MIN_POSITIVE) {
        return Err(RdpError::NonConvergence("Jacobi sweeps did not diagonalize the matrix".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigvals = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let eigvecs = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((eigvecs, eigvals))
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// `V * diag(d) * V^T`.
pub fn from_eigen(v: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    v * DMatrix::from_diagonal(d) * v.transpose()
}

/// Symmetric square root of a positive semi-definite matrix.
///
/// Eigenvalues that come out slightly negative from rounding are clamped at 0.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (v, d) = symmetric_eigen(m)?;
    let scale = d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if let Some(&min) = d.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < -1e-10 * scale.max(1.0) {
            return Err(RdpError::NotPositiveDefinite(min));
        }
    }
    Ok(from_eigen(&v, &d.map(|x| x.max(0.0).sqrt())))
}

/// Frobenius norm of `AB - BA`.
pub fn commutator_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * b - b * a).norm()
}
