//! Dense linear algebra helpers with explicit rank thresholds.
//!
//! Every matrix in the crate is a `nalgebra::DMatrix<f64>`. Matrices with zero
//! rows or zero columns are legal inputs everywhere and have rank zero.

use nalgebra::SymmetricEigen;

use crate::error::{invalid, Error, Result};
use crate::{Matrix, Vector};

/// Singular values below `absolute + relative * sigma_max` count as zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankTolerance {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for RankTolerance {
    fn default() -> Self {
        RankTolerance { relative: 1e-10, absolute: 0.0 }
    }
}

impl RankTolerance {
    pub fn new(relative: f64, absolute: f64) -> Result<Self> {
        if !(relative > 0.0 && relative.is_finite()) {
            return invalid(format!("relative rank tolerance must be > 0, got {relative}"));
        }
        if !(absolute >= 0.0 && absolute.is_finite()) {
            return invalid(format!("absolute rank tolerance must be >= 0, got {absolute}"));
        }
        Ok(RankTolerance { relative, absolute })
    }

    fn threshold(&self, sigma_max: f64) -> f64 {
        self.absolute + self.relative * sigma_max
    }
}

pub fn check_finite_matrix(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid(format!("{what} has non-finite entries"))
    }
}

pub fn check_finite_vector(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        invalid(format!("{what} has non-finite entries"))
    }
}

/// Singular values in decreasing order. Empty for empty matrices.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank: the number of singular values above the tolerance threshold.
pub fn rank(m: &Matrix, tol: RankTolerance) -> Result<usize> {
    check_finite_matrix(m, "matrix")?;
    let sv = singular_values(m);
    let Some(&smax) = sv.first() else {
        return Ok(0);
    };
    if smax == 0.0 {
        return Ok(0);
    }
    let thr = tol.threshold(smax);
    Ok(sv.iter().filter(|&&s| s > thr).count())
}

/// Moore–Penrose pseudoinverse with the default rank threshold.
pub fn pinv(m: &Matrix) -> Result<Matrix> {
    pinv_with(m, RankTolerance::default())
}

pub fn pinv_with(m: &Matrix, tol: RankTolerance) -> Result<Matrix> {
    check_finite_matrix(m, "matrix")?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Matrix::zeros(c, r));
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(Matrix::zeros(c, r));
    }
    let thr = tol.threshold(smax);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = Matrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    Ok(out)
}

/// Minimum-norm least-squares solution of `m x = rhs`.
pub fn lstsq_min_norm(m: &Matrix, rhs: &Vector, tol: RankTolerance) -> Result<Vector> {
    if m.ncols() == 0 {
        return Ok(Vector::zeros(0));
    }
    Ok(pinv_with(m, tol)? * rhs)
}

/// Rows of `m` listed in `idx`, in that order.
pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.ncols());
    for (k, &j) in idx.iter().enumerate() {
        out.row_mut(k).copy_from(&m.row(j));
    }
    out
}

pub fn select_entries(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]))
}

/// `[left, right]` side by side.
pub fn hstack(left: &Matrix, right: &Matrix) -> Matrix {
    assert_eq!(left.nrows(), right.nrows(), "hstack row mismatch");
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

/// `[top; bottom]`.
pub fn vstack(top: &Matrix, bottom: &Matrix) -> Matrix {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack column mismatch");
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

/// Σ̃ = S(δ)' Ω S(δ) with S(δ) = [I; δ ⊗ I].
///
/// `omega` is the covariance of `(μ', vec(Π)')'` where `vec` stacks the columns
/// of Π, so block `(a, b)` of Ω (each `d_mu × d_mu`) pairs column `a` with
/// column `b` and block 0 is μ. The result is symmetrised.
pub fn sigma_tilde(omega: &Matrix, delta: &Vector, d_mu: usize) -> Result<Matrix> {
    let side = d_mu * (1 + delta.len());
    if omega.nrows() != side || omega.ncols() != side {
        return invalid(format!(
            "omega must be {side}x{side} for d_mu={d_mu}, d_delta={}, got {}x{}",
            delta.len(),
            omega.nrows(),
            omega.ncols()
        ));
    }
    check_finite_matrix(omega, "omega")?;
    check_finite_vector(delta, "delta")?;
    let weights: Vec<f64> = std::iter::once(1.0).chain(delta.iter().copied()).collect();
    let mut out = Matrix::zeros(d_mu, d_mu);
    for (a, &wa) in weights.iter().enumerate() {
        if wa == 0.0 {
            continue;
        }
        for (b, &wb) in weights.iter().enumerate() {
            if wb == 0.0 {
                continue;
            }
            out += omega.view((a * d_mu, b * d_mu), (d_mu, d_mu)) * (wa * wb);
        }
    }
    Ok(symmetrize(&out))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m` (0 for empty matrices).
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Whether the symmetric part of `m` has no eigenvalue below `-slack`. A
/// Cholesky factorisation of the shifted matrix settles most cases; the
/// eigenvalue route is the fallback.
pub fn is_psd_within(m: &Matrix, slack: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let mut shifted = symmetrize(m);
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += slack;
    }
    if shifted.cholesky().is_some() {
        return true;
    }
    min_eigenvalue(m) >= -slack
}

/// Inverse of a symmetric positive definite matrix, refusing when the
/// eigenvalue ratio exceeds `cond_limit`. A nonnegative `ridge` is added to the
/// diagonal first.
pub fn spd_inverse(m: &Matrix, cond_limit: f64, ridge: f64) -> Result<Matrix> {
    check_finite_matrix(m, "weight matrix")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let mut s = symmetrize(m);
    if ridge > 0.0 {
        for i in 0..n {
            s[(i, i)] += ridge;
        }
    }
    let eig = SymmetricEigen::new(s);
    let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lmin > 0.0) || lmax / lmin > cond_limit {
        let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        return Err(Error::SingularWeight { condition });
    }
    let q = &eig.eigenvectors;
    let inv_diag = Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(symmetrize(&(q * inv_diag * q.transpose())))
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}
