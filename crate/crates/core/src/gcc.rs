//! The GCC test.
//!
//! Given `C̄ = D + BΠ̄`, a first-stage projection under a preliminary weight
//! gives `δ̃`, which fixes `Σ̃ = S(δ̃)'Ω̄S(δ̃)`. The statistic is the `nΣ̃⁻¹`
//! weighted distance from `μ̄` to `{μ : ∃δ, Bμ + C̄δ ≤ d}` and the degrees of
//! freedom come from the active rows at the minimiser.

use serde::{Deserialize, Serialize};

use crate::distributions::cv;
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    asymmetry, check_finite_matrix, check_finite_vector, hstack, rank, select_rows, sigma_tilde, spd_inverse,
    RankTolerance,
};
use crate::polytope::project_polyhedron;
use crate::qp::{min_norm_multipliers, solve_restricted_qp, QpProblem, QpSolution, DEFAULT_ACTIVE_TOL};
use crate::{Matrix, Variant, Vector};

/// Slack added to the critical value before comparing.
pub const REJECT_SLACK: f64 = 1e-8;
pub const DEFAULT_COND_LIMIT: f64 = 1e12;
/// Multipliers below this fraction of the largest are treated as zero.
pub const MULTIPLIER_SUPPORT_TOL: f64 = 1e-8;

/// Known structure of the null `B(μ + Πδ) + Dδ ≤ d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub b: Matrix,
    pub d_mat: Matrix,
    pub d: Vector,
    /// rows that come from equalities written as two inequalities
    pub eq_indices: Vec<usize>,
    pub n: usize,
}

impl ProblemSpec {
    pub fn new(b: Matrix, d_mat: Matrix, d: Vector, eq_indices: Vec<usize>, n: usize) -> Result<Self> {
        let s = ProblemSpec { b, d_mat, d, eq_indices, n };
        s.validate()?;
        Ok(s)
    }

    pub fn d_c(&self) -> usize {
        self.b.nrows()
    }

    pub fn d_mu(&self) -> usize {
        self.b.ncols()
    }

    pub fn d_delta(&self) -> usize {
        self.d_mat.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        check_finite_matrix(&self.b, "B")?;
        check_finite_matrix(&self.d_mat, "D")?;
        check_finite_vector(&self.d, "d")?;
        if self.d_mat.nrows() != self.d_c() {
            return invalid(format!("D has {} rows but B has {}", self.d_mat.nrows(), self.d_c()));
        }
        if self.d.len() != self.d_c() {
            return invalid(format!("d has length {} but B has {} rows", self.d.len(), self.d_c()));
        }
        if let Some(&j) = self.eq_indices.iter().find(|&&j| j >= self.d_c()) {
            return invalid(format!("eq_indices entry {j} out of range for {} rows", self.d_c()));
        }
        if self.n == 0 {
            return invalid("sample size n must be at least 1");
        }
        Ok(())
    }

    /// `C̄ = D + BΠ̄`.
    pub fn c_bar(&self, pi_bar: &Matrix) -> Matrix {
        &self.d_mat + &self.b * pi_bar
    }
}

/// Reduced-form estimates. `omega_bar` is the covariance of
/// `√n (μ̄ − μ, vec(Π̄ − Π))` with `vec` stacking columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub mu_bar: Vector,
    pub pi_bar: Matrix,
    pub omega_bar: Matrix,
}

impl Estimates {
    pub fn validate(&self) -> Result<()> {
        check_finite_vector(&self.mu_bar, "mu_bar")?;
        check_finite_matrix(&self.pi_bar, "Pi_bar")?;
        check_finite_matrix(&self.omega_bar, "Omega")?;
        let dm = self.mu_bar.len();
        if self.pi_bar.nrows() != dm {
            return invalid(format!("Pi_bar has {} rows but mu_bar has length {dm}", self.pi_bar.nrows()));
        }
        let side = dm * (1 + self.pi_bar.ncols());
        if self.omega_bar.nrows() != side || self.omega_bar.ncols() != side {
            return invalid(format!(
                "Omega must be {side}x{side}, got {}x{}",
                self.omega_bar.nrows(),
                self.omega_bar.ncols()
            ));
        }
        let scale = 1.0 + self.omega_bar.amax();
        if asymmetry(&self.omega_bar) > 1e-10 * scale {
            return invalid("Omega is not symmetric");
        }
        let trace = self.omega_bar.trace().abs();
        if !crate::linalg::is_psd_within(&self.omega_bar, 1e-10 * trace.max(f64::MIN_POSITIVE)) {
            return invalid("Omega is not positive semidefinite");
        }
        Ok(())
    }

    /// Check that these estimates fit `spec`.
    pub fn check_against(&self, spec: &ProblemSpec) -> Result<()> {
        self.validate()?;
        if self.mu_bar.len() != spec.d_mu() {
            return invalid(format!("mu_bar has length {} but B has {} columns", self.mu_bar.len(), spec.d_mu()));
        }
        if self.pi_bar.ncols() != spec.d_delta() {
            return invalid(format!(
                "Pi_bar has {} columns but D has {}",
                self.pi_bar.ncols(),
                spec.d_delta()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GccOptions {
    pub active_tol: f64,
    pub rank_tol: RankTolerance,
    /// First-stage weight; identity when `None`.
    pub upsilon: Option<Matrix>,
    /// Also compute the diagnostic DoFs `r̂` and `t̂`.
    pub diagnostics: bool,
    /// Ridge added to Σ̃ before inversion. Off unless set.
    pub ridge: f64,
    pub cond_limit: f64,
    /// Reference row of `A` for the refinement; first eligible row if `None`.
    pub reference_row: Option<usize>,
}

impl Default for GccOptions {
    fn default() -> Self {
        GccOptions {
            active_tol: DEFAULT_ACTIVE_TOL,
            rank_tol: RankTolerance::default(),
            upsilon: None,
            diagnostics: false,
            ridge: 0.0,
            cond_limit: DEFAULT_COND_LIMIT,
            reference_row: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub variant: Variant,
    pub alpha: f64,
    /// `T_n`; `null` in JSON when the constraint set is empty.
    pub statistic: f64,
    pub dof_s: usize,
    pub dof_r: Option<usize>,
    pub dof_t: Option<usize>,
    pub critical_value: f64,
    pub refined_level: Option<f64>,
    pub reject: bool,
    /// The sample constraint set is empty; `reject` is then true.
    pub infeasible: bool,
    /// The refinement could not run and the GCC decision was kept.
    pub fallback: bool,
    pub active_set: Vec<usize>,
    pub delta_tilde: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub delta_hat: Vec<f64>,
    pub notes: Vec<String>,
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok(())
}

/// First-stage restricted estimates `(μ̃, δ̃)` with `δ̃` the minimum-norm
/// choice among the minimisers.
pub fn stage1_estimate(spec: &ProblemSpec, est: &Estimates, upsilon: Option<&Matrix>) -> Result<(Vector, Vector)> {
    spec.validate()?;
    est.check_against(spec)?;
    let c_bar = spec.c_bar(&est.pi_bar);
    stage1_with(spec, est, &c_bar, upsilon, DEFAULT_ACTIVE_TOL)
}

fn stage1_with(
    spec: &ProblemSpec,
    est: &Estimates,
    c_bar: &Matrix,
    upsilon: Option<&Matrix>,
    active_tol: f64,
) -> Result<(Vector, Vector)> {
    let dm = spec.d_mu();
    let w = match upsilon {
        Some(u) => {
            if u.nrows() != dm || u.ncols() != dm {
                return invalid(format!("upsilon must be {dm}x{dm}"));
            }
            u.clone()
        }
        None => Matrix::identity(dm, dm),
    };
    let p = QpProblem::new(w, est.mu_bar.clone(), spec.b.clone(), c_bar.clone(), spec.d.clone())?
        .with_active_tol(active_tol)?;
    // the solver already reports the minimum-norm δ over the optimal face
    let sol = solve_restricted_qp(&p)?;
    Ok((sol.mu_hat, sol.delta_hat))
}

/// `T_n = min n(μ̄ − μ)'Σ̃⁻¹(μ̄ − μ)` over `Bμ + C̄δ ≤ d`.
pub fn qlr_statistic(spec: &ProblemSpec, est: &Estimates, sigma: &Matrix) -> Result<(f64, QpSolution)> {
    spec.validate()?;
    est.check_against(spec)?;
    let c_bar = spec.c_bar(&est.pi_bar);
    let (p, sol) = qlr_with(spec, est, &c_bar, sigma, &GccOptions::default())?;
    Ok((p.objective_at(&sol.mu_hat), sol))
}

fn qlr_with(
    spec: &ProblemSpec,
    est: &Estimates,
    c_bar: &Matrix,
    sigma: &Matrix,
    opts: &GccOptions,
) -> Result<(QpProblem, QpSolution)> {
    let inv = spd_inverse(sigma, opts.cond_limit, opts.ridge)?;
    let w = crate::linalg::symmetrize(&(inv * spec.n as f64));
    let p = QpProblem::new(w, est.mu_bar.clone(), spec.b.clone(), c_bar.clone(), spec.d.clone())?
        .with_active_tol(opts.active_tol)?;
    let sol = solve_restricted_qp(&p)?;
    Ok((p, sol))
}

fn rank_difference(spec: &ProblemSpec, c_bar: &Matrix, rows: &[usize], tol: RankTolerance) -> Result<usize> {
    if rows.is_empty() {
        return Ok(0);
    }
    let bd = hstack(&select_rows(&spec.b, rows), &select_rows(&spec.d_mat, rows));
    let full = rank(&bd, tol)?;
    let nuis = rank(&select_rows(c_bar, rows), tol)?;
    Ok(full.saturating_sub(nuis))
}

/// `ŝ = rk(I_K[B, D]) − rk(I_K C̄)`.
pub fn dof_s(spec: &ProblemSpec, c_bar: &Matrix, active: &[usize], tol: RankTolerance) -> Result<usize> {
    if let Some(&j) = active.iter().find(|&&j| j >= spec.d_c()) {
        return invalid(format!("active index {j} out of range"));
    }
    rank_difference(spec, c_bar, active, tol)
}

/// `t̂`: the rank difference on the support of the multipliers.
pub fn dof_t(spec: &ProblemSpec, c_bar: &Matrix, psi_min_norm: &Vector, tol: RankTolerance) -> Result<usize> {
    if psi_min_norm.len() != spec.d_c() {
        return invalid(format!("psi has length {} but there are {} rows", psi_min_norm.len(), spec.d_c()));
    }
    let top = psi_min_norm.amax();
    if top == 0.0 {
        return Ok(0);
    }
    let support: Vec<usize> = (0..spec.d_c()).filter(|&j| psi_min_norm[j] > MULTIPLIER_SUPPORT_TOL * top).collect();
    rank_difference(spec, c_bar, &support, tol)
}

/// `r̂ = rk(A_Ĵ)` where `Ĵ` are the projected inequalities active at `μ̂`.
pub fn dof_r(spec: &ProblemSpec, c_bar: &Matrix, mu_hat: &Vector, tol: RankTolerance) -> Result<usize> {
    dof_r_with(spec, c_bar, mu_hat, tol, DEFAULT_ACTIVE_TOL)
}

pub(crate) fn dof_r_with(
    spec: &ProblemSpec,
    c_bar: &Matrix,
    mu_hat: &Vector,
    tol: RankTolerance,
    active_tol: f64,
) -> Result<usize> {
    let rep = project_polyhedron(&spec.b, c_bar, &spec.d)?;
    if rep.d_a() == 0 {
        return Ok(0);
    }
    let j = rep.active_rows(mu_hat, active_tol);
    if j.is_empty() {
        return Ok(0);
    }
    rank(&select_rows(&rep.a, &j), tol)
}

/// Everything computed on the way to a GCC decision, reused by the
/// refinement.
#[derive(Debug, Clone)]
pub(crate) struct GccRun {
    pub result: TestResult,
    pub c_bar: Matrix,
    pub sigma: Option<Matrix>,
}

fn infeasible_result(variant: Variant, alpha: f64, spec: &ProblemSpec, note: String) -> TestResult {
    TestResult {
        variant,
        alpha,
        statistic: f64::INFINITY,
        dof_s: 0,
        dof_r: None,
        dof_t: None,
        critical_value: f64::NAN,
        refined_level: None,
        reject: true,
        infeasible: true,
        fallback: false,
        active_set: Vec::new(),
        delta_tilde: vec![f64::NAN; spec.d_delta()],
        mu_hat: vec![f64::NAN; spec.d_mu()],
        delta_hat: vec![f64::NAN; spec.d_delta()],
        notes: vec![note],
    }
}

pub(crate) fn gcc_run(spec: &ProblemSpec, est: &Estimates, alpha: f64, opts: &GccOptions) -> Result<GccRun> {
    validate_alpha(alpha)?;
    spec.validate()?;
    est.check_against(spec)?;
    let c_bar = spec.c_bar(&est.pi_bar);

    let (_mu_tilde, delta_tilde) = match stage1_with(spec, est, &c_bar, opts.upsilon.as_ref(), opts.active_tol) {
        Ok(v) => v,
        Err(Error::Infeasible { .. }) => {
            let r = infeasible_result(Variant::Gcc, alpha, spec, "sample constraint set is empty".into());
            return Ok(GccRun { result: r, c_bar, sigma: None });
        }
        Err(e) => return Err(e),
    };
    let sigma = sigma_tilde(&est.omega_bar, &delta_tilde, spec.d_mu())?;
    let (p, sol) = qlr_with(spec, est, &c_bar, &sigma, opts)?;
    let statistic = p.objective_at(&sol.mu_hat);
    let s = dof_s(spec, &c_bar, &sol.active_set, opts.rank_tol)?;
    let critical_value = cv(s, alpha)?;
    let reject = statistic > critical_value + REJECT_SLACK;

    let mut notes = Vec::new();
    let (mut r_hat, mut t_hat) = (None, None);
    if opts.diagnostics {
        let psi = min_norm_multipliers(&p, &sol, &sol.active_set)?;
        t_hat = Some(dof_t(spec, &c_bar, &psi, opts.rank_tol)?);
        match dof_r_with(spec, &c_bar, &sol.mu_hat, opts.rank_tol, opts.active_tol) {
            Ok(r) => r_hat = Some(r),
            Err(Error::GuardExceeded(m)) => notes.push(format!("dof_r skipped: {m}")),
            Err(e) => return Err(e),
        }
    }

    let result = TestResult {
        variant: Variant::Gcc,
        alpha,
        statistic,
        dof_s: s,
        dof_r: r_hat,
        dof_t: t_hat,
        critical_value,
        refined_level: None,
        reject,
        infeasible: false,
        fallback: false,
        active_set: sol.active_set.clone(),
        delta_tilde: to_vec(&delta_tilde),
        mu_hat: to_vec(&sol.mu_hat),
        delta_hat: to_vec(&sol.delta_hat),
        notes,
    };
    Ok(GccRun { result, c_bar, sigma: Some(sigma) })
}

/// Run the GCC test at level `alpha`.
pub fn gcc_test(spec: &ProblemSpec, est: &Estimates, alpha: f64, opts: &GccOptions) -> Result<TestResult> {
    Ok(gcc_run(spec, est, alpha, opts)?.result)
}
