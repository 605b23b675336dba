//! Exhaustive active-set oracle for small instances.
//!
//! Every subset S of rows (|S| ≤ number of variables) is treated as an
//! equality set, the stationarity system is solved by pseudoinverse, and the
//! best feasible candidate wins. Some subset always reproduces an optimal
//! point: take a minimal face of the optimal δ-set and a row basis of its
//! active rows.

use super::nnls::nnls;
use super::{QpProblem, QpSolution};
use crate::error::{invalid, Error, Result};
use crate::linalg::{max_abs_vec, pinv_with, select_rows, RankTolerance};
use crate::{Matrix, Vector};

pub const BRUTE_MAX_ROWS: usize = 12;
pub const BRUTE_MAX_VARS: usize = 8;

pub fn brute_force_qp(p: &QpProblem) -> Result<QpSolution> {
    p.validate()?;
    let dm = p.d_mu();
    let dd = p.d_delta();
    let dc = p.d_c();
    let n = dm + dd;
    if dc > BRUTE_MAX_ROWS || n > BRUTE_MAX_VARS {
        return invalid(format!(
            "brute force limited to {BRUTE_MAX_ROWS} rows and {BRUTE_MAX_VARS} variables (got {dc}, {n})"
        ));
    }
    let a = p.constraint_matrix();
    // unit-scale curvature and rows keep the KKT systems comparable across subsets
    let w_scale = p.weight.amax().max(f64::MIN_POSITIVE);
    let mut h = Matrix::zeros(n, n);
    h.view_mut((0, 0), (dm, dm)).copy_from(&(&p.weight * (2.0 / w_scale)));
    let mut c = Vector::zeros(n);
    c.rows_mut(0, dm).copy_from(&(&p.weight * &p.center * (-2.0 / w_scale)));
    let norms: Vec<f64> = (0..dc).map(|j| a.row(j).norm().max(f64::MIN_POSITIVE)).collect();
    let an = Matrix::from_fn(dc, n, |i, j| a[(i, j)] / norms[i]);
    let tol = RankTolerance::new(1e-11, 0.0).expect("valid");

    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1u32 << dc) {
        let subset: Vec<usize> = (0..dc).filter(|&j| mask & (1 << j) != 0).collect();
        if subset.len() > n {
            continue;
        }
        let k = subset.len();
        let ak = select_rows(&an, &subset);
        let mut kkt = Matrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, k)).copy_from(&ak.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(&ak);
        let mut rhs = Vector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&c));
        for (i, &j) in subset.iter().enumerate() {
            rhs[n + i] = p.d[j] / norms[j];
        }
        let sol = pinv_with(&kkt, tol)? * rhs;
        let x = sol.rows(0, n).into_owned();
        let ax = &a * &x;
        let xn = x.norm();
        let feasible = (0..dc).all(|j| ax[j] - p.d[j] <= 1e-10 * (1.0 + p.d[j].abs() + xn));
        if !feasible {
            continue;
        }
        let mu = x.rows(0, dm).into_owned();
        let obj = p.objective_at(&mu);
        if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-14 * (1.0 + b.abs())) {
            best = Some((obj, x));
        }
    }
    let Some((objective, x)) = best else {
        return Err(Error::Infeasible { certificate: Vec::new(), margin: f64::NAN });
    };
    let mu_hat = x.rows(0, dm).into_owned();
    let delta_hat = x.rows(dm, dd).into_owned();
    let active_set = p.active_set_at(&mu_hat, &delta_hat);

    // multipliers by nonnegative least squares on the stationarity system
    let ak_t = select_rows(&a, &active_set).transpose();
    let mut target = Vector::zeros(n);
    target.rows_mut(0, dm).copy_from(&(&p.weight * (&p.center - &mu_hat) * 2.0));
    let psi_k = nnls(&ak_t, &target);
    let mut psi = Vector::zeros(dc);
    for (i, &j) in active_set.iter().enumerate() {
        psi[j] = psi_k[i];
    }
    let stat = max_abs_vec(&(&ak_t * &psi_k - &target)) / (1.0 + max_abs_vec(&target));
    Ok(QpSolution { mu_hat, delta_hat, psi_hat: psi, objective, active_set, kkt_residual: stat })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_returns_center() {
        let p = QpProblem::new(Matrix::identity(2, 2), Vector::from_vec(vec![3.0, 4.0]), Matrix::zeros(0, 2), Matrix::zeros(0, 0), Vector::zeros(0)).unwrap();
        let s = brute_force_qp(&p).unwrap();
        assert!((s.mu_hat - &p.center).norm() < 1e-12);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn infeasible_pair() {
        let b = Matrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let p = QpProblem::new(Matrix::identity(1, 1), Vector::zeros(1), b, Matrix::zeros(2, 0), Vector::from_vec(vec![-1.0, -1.0])).unwrap();
        assert!(matches!(brute_force_qp(&p), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn guard() {
        let p = QpProblem::new(Matrix::identity(1, 1), Vector::zeros(1), Matrix::zeros(13, 1), Matrix::zeros(13, 0), Vector::zeros(13)).unwrap();
        assert!(matches!(brute_force_qp(&p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn degenerate_two_row_instance() {
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let p = QpProblem::new(Matrix::identity(1, 1), Vector::zeros(1), b, c, Vector::zeros(2)).unwrap();
        let s = brute_force_qp(&p).unwrap();
        assert!(s.objective < 1e-20);
    }
}
