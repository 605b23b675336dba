//! The refined GCC test.
//!
//! When `ŝ = 1` and `T_n` lands in `[cv(1, 2α), cv(1, α)]`, the level is
//! raised to `β̂ = 2αΦ(τ)` where `τ` measures how far the inactive projected
//! inequalities are from binding. Everywhere else the decision is the GCC
//! one.

use crate::distributions::{cv, normal_cdf};
use crate::error::{invalid, Error, Result};
use crate::gcc::{gcc_run, Estimates, GccOptions, GccRun, ProblemSpec, TestResult, REJECT_SLACK};
use crate::linalg::{rank, select_rows};
use crate::polytope::{project_polyhedron, ProjectedRep};
use crate::{Matrix, Variant, Vector};

fn sigma_norm(a: &Vector, sigma: &Matrix) -> f64 {
    (a.transpose() * sigma * a)[(0, 0)].max(0.0).sqrt()
}

fn row(rep: &ProjectedRep, j: usize) -> Vector {
    rep.a.row(j).transpose()
}

/// Inactivity `τ_j` of projected row `j` relative to the reference row.
pub fn tau_inactivity(
    rep: &ProjectedRep,
    sigma: &Matrix,
    mu_hat: &Vector,
    n: usize,
    ref_row: usize,
    j: usize,
) -> Result<f64> {
    let d_a = rep.d_a();
    if ref_row >= d_a || j >= d_a {
        return invalid(format!("row index out of range for {d_a} projected rows"));
    }
    if ref_row == j {
        return invalid("tau is undefined for the reference row itself");
    }
    let a1 = row(rep, ref_row);
    if a1.norm() == 0.0 {
        return invalid("reference row of A is zero");
    }
    let aj = row(rep, j);
    let n1 = sigma_norm(&a1, sigma);
    let nj = sigma_norm(&aj, sigma);
    let cross = (a1.transpose() * sigma * &aj)[(0, 0)];
    let denom = n1 * nj - cross;
    // parallel rows make the denominator vanish up to round-off
    if denom <= 1e-10 * n1 * nj || denom <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let slack = (rep.g[j] - aj.dot(mu_hat)).max(0.0);
    Ok((n as f64).sqrt() * n1 * slack / denom)
}

/// First active row with a nonzero coefficient vector.
fn reference_row(rep: &ProjectedRep, active: &[usize]) -> Option<usize> {
    let top = rep.a.amax();
    active.iter().copied().find(|&j| rep.a.row(j).amax() > 1e-12 * top.max(f64::MIN_POSITIVE))
}

/// The refined level `β̂ ∈ [α, 2α]`.
pub fn refined_level(
    rep: &ProjectedRep,
    sigma: &Matrix,
    mu_hat: &Vector,
    n: usize,
    r_hat: usize,
    alpha: f64,
) -> Result<f64> {
    refined_level_with(rep, sigma, mu_hat, n, r_hat, alpha, None, crate::qp::DEFAULT_ACTIVE_TOL)
}

#[allow(clippy::too_many_arguments)]
fn refined_level_with(
    rep: &ProjectedRep,
    sigma: &Matrix,
    mu_hat: &Vector,
    n: usize,
    r_hat: usize,
    alpha: f64,
    forced_ref: Option<usize>,
    active_tol: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return invalid(format!("refinement needs alpha in (0, 0.5), got {alpha}"));
    }
    if r_hat != 1 {
        return Ok(alpha);
    }
    let active = rep.active_rows(mu_hat, active_tol);
    let r = match forced_ref {
        Some(r) => {
            if !active.contains(&r) || rep.a.row(r).amax() == 0.0 {
                return invalid(format!("reference row {r} is not an active nonzero row"));
            }
            r
        }
        None => reference_row(rep, &active)
            .ok_or_else(|| Error::Internal("r_hat is 1 but no active projected row is nonzero".into()))?,
    };
    let mut tau = f64::INFINITY;
    for j in 0..rep.d_a() {
        if j != r {
            tau = tau.min(tau_inactivity(rep, sigma, mu_hat, n, r, j)?);
        }
    }
    let beta = 2.0 * alpha * normal_cdf(tau)?;
    Ok(beta.clamp(alpha, 2.0 * alpha))
}

/// Whether `T` falls in the refinement window for `ŝ = 1`.
pub fn in_window(statistic: f64, dof_s: usize, alpha: f64) -> Result<bool> {
    if dof_s != 1 || !statistic.is_finite() {
        return Ok(false);
    }
    Ok(statistic >= cv(1, 2.0 * alpha)? && statistic <= cv(1, alpha)?)
}

pub(crate) fn refine(
    spec: &ProblemSpec,
    run: &GccRun,
    opts: &GccOptions,
) -> Result<TestResult> {
    let mut out = run.result.clone();
    out.variant = Variant::Rgcc;
    let alpha = out.alpha;
    if !(alpha < 0.5) {
        return invalid(format!("refinement needs alpha in (0, 0.5), got {alpha}"));
    }
    if out.infeasible || !in_window(out.statistic, out.dof_s, alpha)? {
        return Ok(out);
    }
    let sigma = run.sigma.as_ref().expect("feasible runs carry sigma");
    let rep = match project_polyhedron(&spec.b, &run.c_bar, &spec.d) {
        Ok(r) => r,
        Err(Error::GuardExceeded(m)) => {
            out.fallback = true;
            out.notes.push(format!("refinement skipped, GCC decision kept: {m}"));
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let mu_hat = Vector::from_vec(out.mu_hat.clone());
    let active = rep.active_rows(&mu_hat, opts.active_tol);
    let r_hat = if active.is_empty() { 0 } else { rank(&select_rows(&rep.a, &active), opts.rank_tol)? };
    let beta = refined_level_with(&rep, sigma, &mu_hat, spec.n, r_hat, alpha, opts.reference_row, opts.active_tol)?;
    out.dof_r = Some(r_hat);
    out.refined_level = Some(beta);
    out.critical_value = cv(1, beta)?;
    out.reject = out.statistic > out.critical_value + REJECT_SLACK;
    Ok(out)
}

/// Run the refined test at level `alpha`.
pub fn rgcc_test(spec: &ProblemSpec, est: &Estimates, alpha: f64, opts: &GccOptions) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return invalid(format!("refinement needs alpha in (0, 0.5), got {alpha}"));
    }
    let run = gcc_run(spec, est, alpha, opts)?;
    refine(spec, &run, opts)
}

/// Both decisions from one pass of the shared GCC pipeline.
pub fn gcc_and_rgcc(
    spec: &ProblemSpec,
    est: &Estimates,
    alpha: f64,
    opts: &GccOptions,
) -> Result<(TestResult, TestResult)> {
    let run = gcc_run(spec, est, alpha, opts)?;
    let refined = refine(spec, &run, opts)?;
    Ok((run.result, refined))
}
