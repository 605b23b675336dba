//! Quadratic projection onto `{μ : ∃δ, Bμ + Cδ ≤ d}`.
//!
//! The objective `(μ − x0)' W (μ − x0)` penalises μ only, so the Hessian over
//! `(μ, δ)` is `diag(2W, 0)`: μ̂ is unique while δ̂ in general is not. The
//! multipliers ψ satisfy `2W(x0 − μ̂) = B'ψ`, `C'ψ = 0`, `ψ ≥ 0` and
//! complementary slackness.

mod brute;
pub(crate) mod engine;
pub mod nnls;

pub use brute::brute_force_qp;

use crate::error::{invalid, Error, Result};
use crate::linalg::{asymmetry, check_finite_matrix, check_finite_vector, max_abs, max_abs_vec, select_rows};
use crate::{Matrix, Vector};
use engine::ConvexQp;
use std::sync::atomic::{AtomicU64, Ordering};

static WORST_KKT: AtomicU64 = AtomicU64::new(0);

/// Largest `kkt_residual / (1 + ‖x0‖)` over every successful solve in this
/// process.
pub fn worst_kkt_ratio() -> f64 {
    f64::from_bits(WORST_KKT.load(Ordering::Relaxed))
}

fn record_kkt(residual: f64, center: &Vector) {
    let r = residual / (1.0 + center.norm());
    // nonnegative floats order like their bit patterns
    if r > 0.0 {
        WORST_KKT.fetch_max(r.to_bits(), Ordering::Relaxed);
    } else if r.is_nan() {
        WORST_KKT.store(f64::NAN.to_bits(), Ordering::Relaxed);
    }
}

/// Default relative tolerance for "holds with equality".
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive definite `d_mu × d_mu` weight.
    pub weight: Matrix,
    /// Centre `x0` of the projection.
    pub center: Vector,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Vector,
    pub active_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub mu_hat: Vector,
    pub delta_hat: Vector,
    /// One multiplier per constraint row.
    pub psi_hat: Vector,
    pub objective: f64,
    /// Sorted indices of rows holding with equality (0-based).
    pub active_set: Vec<usize>,
    /// Largest scaled KKT violation (stationarity, feasibility,
    /// complementarity) on the row-normalised problem.
    pub kkt_residual: f64,
}

impl QpProblem {
    pub fn new(weight: Matrix, center: Vector, b: Matrix, c: Matrix, d: Vector) -> Result<Self> {
        let p = QpProblem { weight, center, b, c, d, active_tol: DEFAULT_ACTIVE_TOL };
        p.validate()?;
        Ok(p)
    }

    pub fn with_active_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return invalid(format!("active tolerance must be > 0, got {tol}"));
        }
        self.active_tol = tol;
        Ok(self)
    }

    pub fn d_mu(&self) -> usize {
        self.center.len()
    }

    pub fn d_delta(&self) -> usize {
        self.c.ncols()
    }

    pub fn d_c(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dm = self.center.len();
        let dc = self.d.len();
        if self.weight.shape() != (dm, dm) {
            return invalid(format!("weight must be {dm}x{dm}, got {:?}", self.weight.shape()));
        }
        if self.b.shape() != (dc, dm) {
            return invalid(format!("B must be {dc}x{dm}, got {:?}", self.b.shape()));
        }
        if self.c.nrows() != dc {
            return invalid(format!("C must have {dc} rows, got {}", self.c.nrows()));
        }
        check_finite_matrix(&self.weight, "weight")?;
        check_finite_vector(&self.center, "center")?;
        check_finite_matrix(&self.b, "B")?;
        check_finite_matrix(&self.c, "C")?;
        check_finite_vector(&self.d, "d")?;
        if asymmetry(&self.weight) > 1e-12 * (1.0 + max_abs(&self.weight)) {
            return invalid("weight matrix is not symmetric");
        }
        if !(self.active_tol > 0.0) {
            return invalid("active tolerance must be > 0");
        }
        Ok(())
    }

    /// Stacked constraint matrix `[B, C]`.
    pub fn constraint_matrix(&self) -> Matrix {
        crate::linalg::hstack(&self.b, &self.c)
    }

    /// Rows with `|row_j·(μ,δ) − d_j| ≤ tol·(1 + |d_j| + ‖row_j‖‖(μ,δ)‖)`.
    pub fn active_set_at(&self, mu: &Vector, delta: &Vector) -> Vec<usize> {
        let a = self.constraint_matrix();
        let mut x = Vector::zeros(mu.len() + delta.len());
        x.rows_mut(0, mu.len()).copy_from(mu);
        x.rows_mut(mu.len(), delta.len()).copy_from(delta);
        let ax = &a * &x;
        let xn = x.norm();
        (0..self.d_c())
            .filter(|&j| {
                let scale = 1.0 + self.d[j].abs() + a.row(j).norm() * xn;
                (ax[j] - self.d[j]).abs() <= self.active_tol * scale
            })
            .collect()
    }

    pub fn objective_at(&self, mu: &Vector) -> f64 {
        let r = mu - &self.center;
        (r.transpose() * &self.weight * &r)[(0, 0)].max(0.0)
    }

    fn as_convex(&self) -> ConvexQp {
        let dm = self.d_mu();
        let dd = self.d_delta();
        let n = dm + dd;
        let mut h = Matrix::zeros(n, n);
        h.view_mut((0, 0), (dm, dm)).copy_from(&(&self.weight * 2.0));
        let mut c = Vector::zeros(n);
        c.rows_mut(0, dm).copy_from(&(&self.weight * &self.center * -2.0));
        let mut ridge = Vector::zeros(n);
        ridge.rows_mut(dm, dd).fill(1e-10);
        ConvexQp {
            h,
            c,
            eq_a: Matrix::zeros(0, n),
            eq_b: Vector::zeros(0),
            g: self.constraint_matrix(),
            hv: self.d.clone(),
            ridge,
        }
    }
}

/// Solve `min (μ − x0)'W(μ − x0)` over `Bμ + Cδ ≤ d`.
pub fn solve_restricted_qp(p: &QpProblem) -> Result<QpSolution> {
    p.validate()?;
    let dm = p.d_mu();
    let dd = p.d_delta();
    let sol = engine::solve(&p.as_convex())?;
    let mu_hat = sol.x.rows(0, dm).into_owned();
    let mut delta_hat = sol.x.rows(dm, dd).into_owned();
    // μ̂ is unique but δ̂ need not be; report the minimum-norm optimal δ.
    if dd > 0 {
        if let Ok(dn) = min_norm_point(&p.c, &(&p.d - &p.b * &mu_hat)) {
            delta_hat = dn;
        }
    }
    let active_set = p.active_set_at(&mu_hat, &delta_hat);
    let mut out = QpSolution {
        objective: p.objective_at(&mu_hat),
        mu_hat,
        delta_hat,
        psi_hat: sol.ineq_mult,
        active_set,
        kkt_residual: sol.residual,
    };
    let scale = max_abs_vec(&out.psi_hat);
    let stale = (0..p.d_c()).any(|j| out.psi_hat[j] > 1e-10 * (1.0 + scale) && !out.active_set.contains(&j));
    if stale {
        out.psi_hat = min_norm_multipliers(p, &out, &out.active_set.clone())?;
    }
    record_kkt(out.kkt_residual, &p.center);
    Ok(out)
}

/// The Euclidean-norm minimiser over `{δ : Cδ ≤ b}`.
pub fn min_norm_point(c: &Matrix, b: &Vector) -> Result<Vector> {
    if c.nrows() != b.len() {
        return invalid(format!("C has {} rows but b has length {}", c.nrows(), b.len()));
    }
    let k = c.ncols();
    let p = QpProblem::new(Matrix::identity(k, k), Vector::zeros(k), c.clone(), Matrix::zeros(c.nrows(), 0), b.clone())?;
    Ok(solve_restricted_qp(&p)?.mu_hat)
}

/// Minimum-norm KKT multipliers supported on `active`.
///
/// Solves `min ‖ψ‖` subject to `ψ ≥ 0`, `B'ψ = 2W(x0 − μ̂)`, `C'ψ = 0` and
/// `ψ_j = 0` off `active`, with the same QP engine.
pub fn min_norm_multipliers(p: &QpProblem, s: &QpSolution, active: &[usize]) -> Result<Vector> {
    let dc = p.d_c();
    if let Some(&bad) = active.iter().find(|&&j| j >= dc) {
        return invalid(format!("active index {bad} out of range for {dc} constraints"));
    }
    let mut k: Vec<usize> = active.to_vec();
    k.sort_unstable();
    k.dedup();
    let dm = p.d_mu();
    let dd = p.d_delta();
    let mut rhs = Vector::zeros(dm + dd);
    rhs.rows_mut(0, dm).copy_from(&(&p.weight * (&p.center - &s.mu_hat) * 2.0));
    let rhs_scale = 1.0 + max_abs_vec(&rhs);

    if k.is_empty() {
        let r = max_abs_vec(&rhs) / rhs_scale;
        if r > 1e-8 {
            return Err(Error::SolverFailure {
                reason: "nonzero gradient but no active constraints".into(),
                residual: r,
            });
        }
        return Ok(Vector::zeros(dc));
    }

    // E ψ_K = rhs with E = [B_K'; C_K'], compressed to its row space.
    let e = select_rows(&p.constraint_matrix(), &k).transpose();
    let svd = e.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
        .collect();
    let mut eq_a = Matrix::zeros(keep.len(), k.len());
    let mut eq_b = Vector::zeros(keep.len());
    let mut projected = Vector::zeros(rhs.len());
    for (r, &i) in keep.iter().enumerate() {
        let ui = u.column(i);
        let coef = ui.dot(&rhs);
        projected += ui * coef;
        eq_a.row_mut(r).copy_from(&(vt.row(i) * svd.singular_values[i]));
        eq_b[r] = coef;
    }
    let inconsistency = max_abs_vec(&(&rhs - &projected)) / rhs_scale;
    if inconsistency > 1e-8 {
        return Err(Error::SolverFailure {
            reason: "KKT stationarity system is inconsistent on the supplied active set".into(),
            residual: inconsistency,
        });
    }

    let nk = k.len();
    let qp = ConvexQp {
        h: Matrix::identity(nk, nk) * 2.0,
        c: Vector::zeros(nk),
        eq_a,
        eq_b,
        g: -Matrix::identity(nk, nk),
        hv: Vector::zeros(nk),
        ridge: Vector::zeros(nk),
    };
    let sol = engine::solve(&qp).map_err(|e| match e {
        Error::Infeasible { margin, .. } => Error::SolverFailure {
            reason: "no nonnegative multipliers satisfy the KKT system".into(),
            residual: margin,
        },
        other => other,
    })?;
    let mut psi = Vector::zeros(dc);
    for (i, &j) in k.iter().enumerate() {
        psi[j] = sol.x[i].max(0.0);
    }
    Ok(psi)
}
