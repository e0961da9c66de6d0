//! Dense-matrix kernels shared by every other module: Moore–Penrose inverse,
//! Loewner-order comparison and central finite differences.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Singular values below `rel_tol * σ_max` are treated as zero.
pub const DEFAULT_PINV_TOL: f64 = 1e-12;

const SVD_MAX_ITER: usize = 10_000;

/// A column vector as an `n×1` matrix.
pub fn column(v: nalgebra::DVector<f64>) -> Matrix {
    let n = v.len();
    Matrix::from_vec(n, 1, v.data.into())
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical {
            rows: m.nrows(),
            cols: m.ncols(),
            detail: format!("{what} has non-finite entries"),
        })
    }
}

/// Moore–Penrose pseudoinverse through the singular value decomposition.
pub fn pinv(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    pinv_with_rank(m, rel_tol).map(|(p, _)| p)
}

/// Pseudoinverse together with the numerical rank used to build it.
pub fn pinv_with_rank(m: &Matrix, rel_tol: f64) -> Result<(Matrix, usize)> {
    if !(rel_tol > 0.0) {
        return Err(Error::contract("pinv: rel_tol must be positive"));
    }
    ensure_finite(m, "pinv input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok((Matrix::zeros(cols, rows), 0));
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical {
            rows,
            cols,
            detail: "singular value decomposition did not converge".into(),
        })?;
    let (u, v_t) = match (svd.u.as_ref(), svd.v_t.as_ref()) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::Numerical {
                rows,
                cols,
                detail: "singular vectors missing".into(),
            })
        }
    };
    let sigma_max = svd.singular_values.max();
    let mut out = Matrix::zeros(cols, rows);
    if sigma_max <= 0.0 {
        return Ok((out, 0));
    }
    let cutoff = rel_tol * sigma_max;
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            // out += v_k (1/s) u_k'
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    Ok((out, rank))
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .try_svd(false, false, f64::EPSILON, SVD_MAX_ITER)
        .map(|s| s.singular_values.max())
        .unwrap_or(f64::NAN)
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    symmetrize(a).symmetric_eigen().eigenvalues.min()
}

pub fn max_eigenvalue(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    symmetrize(a).symmetric_eigen().eigenvalues.max()
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    match a.clone().try_svd(false, false, f64::EPSILON, SVD_MAX_ITER) {
        Some(svd) => {
            let max = svd.singular_values.max();
            let min = svd.singular_values.min();
            if min <= 0.0 {
                f64::INFINITY
            } else {
                max / min
            }
        }
        None => f64::NAN,
    }
}

/// `A ⪰ B` in the Loewner order, up to `eig_tol`.
pub fn loewner_geq(a: &Matrix, b: &Matrix, eig_tol: f64) -> Result<bool> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::contract(format!(
            "loewner_geq: shapes {:?} and {:?} are not equal square shapes",
            a.shape(),
            b.shape()
        )));
    }
    Ok(min_eigenvalue(&(a - b)) >= -eig_tol)
}

/// Default central-difference step for a coordinate with value `x`.
pub fn default_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference derivative of a matrix-valued map, one matrix per
/// coordinate of `at`, using the same `step` for every coordinate.
pub fn fd_derivative<F>(f: F, at: &[f64], step: f64) -> Result<Vec<Matrix>>
where
    F: Fn(&[f64]) -> Result<Matrix>,
{
    fd_derivative_with(f, at, |_| step)
}

/// Like [`fd_derivative`], with the per-coordinate default step.
pub fn fd_derivative_scaled<F>(f: F, at: &[f64]) -> Result<Vec<Matrix>>
where
    F: Fn(&[f64]) -> Result<Matrix>,
{
    fd_derivative_with(f, at, default_step)
}

fn fd_derivative_with<F, S>(f: F, at: &[f64], step_for: S) -> Result<Vec<Matrix>>
where
    F: Fn(&[f64]) -> Result<Matrix>,
    S: Fn(f64) -> f64,
{
    let mut point = at.to_vec();
    let mut out = Vec::with_capacity(at.len());
    for c in 0..at.len() {
        let h = step_for(at[c]);
        if !(h > 0.0) {
            return Err(Error::contract("fd_derivative: step must be positive"));
        }
        point[c] = at[c] + h;
        let up = f(&point)?;
        point[c] = at[c] - h;
        let down = f(&point)?;
        point[c] = at[c];
        if up.shape() != down.shape() {
            return Err(Error::contract("fd_derivative: map changed output shape"));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Stacks per-coordinate derivatives `[D_1, …, D_d]` (each `p×1`) into a
/// `p×d` Jacobian.
pub fn columns_to_jacobian(parts: &[Matrix], rows: usize) -> Matrix {
    let mut jac = Matrix::zeros(rows, parts.len());
    for (c, part) in parts.iter().enumerate() {
        for r in 0..rows {
            jac[(r, c)] = part[(r, 0)];
        }
    }
    jac
}
