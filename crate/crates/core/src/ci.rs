//! Confidence intervals for a scalar θ by inverting the test: a coarse grid
//! scan brackets the acceptance region, then bisection pins each endpoint.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gcc::{Estimates, GccOptions, ProblemSpec};
use crate::{run_test, Variant, Vector};

pub const DEFAULT_GRID: usize = 64;

type Evaluator = dyn Fn(f64) -> Result<(ProblemSpec, Estimates)> + Send + Sync;

/// A problem indexed by θ.
#[derive(Clone)]
pub enum ProblemFamily {
    /// `d(θ) = d₀ + θ·d_slope`, `μ̄(θ) = μ̄₀ + θ·mu_slope`; everything else fixed.
    Affine { spec: ProblemSpec, est: Estimates, d_slope: Vector, mu_slope: Vector },
    Generic(Arc<Evaluator>),
}

impl std::fmt::Debug for ProblemFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemFamily::Affine { spec, .. } => write!(f, "Affine(d_C = {})", spec.d_c()),
            ProblemFamily::Generic(_) => write!(f, "Generic"),
        }
    }
}

impl ProblemFamily {
    pub fn affine(spec: ProblemSpec, est: Estimates, d_slope: Vector, mu_slope: Vector) -> Result<Self> {
        spec.validate()?;
        est.check_against(&spec)?;
        if d_slope.len() != spec.d_c() {
            return invalid(format!("d_slope has length {} but there are {} rows", d_slope.len(), spec.d_c()));
        }
        if mu_slope.len() != spec.d_mu() {
            return invalid(format!("mu_slope has length {} but d_mu is {}", mu_slope.len(), spec.d_mu()));
        }
        crate::linalg::check_finite_vector(&d_slope, "d_slope")?;
        crate::linalg::check_finite_vector(&mu_slope, "mu_slope")?;
        Ok(ProblemFamily::Affine { spec, est, d_slope, mu_slope })
    }

    pub fn generic<F>(f: F) -> Self
    where
        F: Fn(f64) -> Result<(ProblemSpec, Estimates)> + Send + Sync + 'static,
    {
        ProblemFamily::Generic(Arc::new(f))
    }

    pub fn at(&self, theta: f64) -> Result<(ProblemSpec, Estimates)> {
        match self {
            ProblemFamily::Affine { spec, est, d_slope, mu_slope } => {
                let mut s = spec.clone();
                s.d = &spec.d + d_slope * theta;
                let mut e = est.clone();
                e.mu_bar = &est.mu_bar + mu_slope * theta;
                Ok((s, e))
            }
            ProblemFamily::Generic(f) => f(theta),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CiOptions {
    pub variant: Variant,
    pub grid: usize,
    /// Endpoint precision; `1e-4·(hi − lo)` when `None`.
    pub tol: Option<f64>,
    pub test: GccOptions,
}

impl Default for CiOptions {
    fn default() -> Self {
        CiOptions { variant: Variant::Gcc, grid: DEFAULT_GRID, tol: None, test: GccOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// nothing on the grid was accepted
    pub empty: bool,
    /// the acceptance region reaches the bracket end, so the endpoint is censored
    pub lower_at_bracket: bool,
    pub upper_at_bracket: bool,
    /// the grid found more than one accepted run
    pub multi_segment: bool,
    pub segments: Vec<[f64; 2]>,
    pub tol: f64,
    pub evaluations: usize,
}

fn accepts(family: &ProblemFamily, theta: f64, alpha: f64, opts: &CiOptions) -> Result<bool> {
    let (spec, est) = family.at(theta)?;
    Ok(!run_test(&spec, &est, alpha, opts.variant, &opts.test)?.reject)
}

/// Shrink `[rej, acc]` (in either order) until it is shorter than `tol`;
/// returns the accepted end.
fn bisect(
    family: &ProblemFamily,
    alpha: f64,
    opts: &CiOptions,
    mut rej: f64,
    mut acc: f64,
    tol: f64,
    evals: &mut usize,
) -> Result<f64> {
    while (acc - rej).abs() > tol {
        let mid = 0.5 * (acc + rej);
        *evals += 1;
        if accepts(family, mid, alpha, opts)? {
            acc = mid;
        } else {
            rej = mid;
        }
    }
    Ok(acc)
}

/// Invert the test over `bracket = (lo, hi)`.
pub fn invert_test(family: &ProblemFamily, alpha: f64, bracket: (f64, f64), opts: &CiOptions) -> Result<CiResult> {
    let (lo, hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return invalid(format!("bracket must satisfy lo < hi, got [{lo}, {hi}]"));
    }
    if opts.grid < 2 {
        return invalid("grid needs at least two points");
    }
    let tol = opts.tol.unwrap_or(1e-4 * (hi - lo));
    if !(tol > 0.0) {
        return invalid("tol must be positive");
    }
    let m = opts.grid;
    let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let verdicts: Vec<bool> =
        grid.par_iter().map(|&t| accepts(family, t, alpha, opts)).collect::<Result<Vec<_>>>()?;
    let mut evals = m;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < m {
        if verdicts[i] {
            let start = i;
            while i + 1 < m && verdicts[i + 1] {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    if runs.is_empty() {
        return Ok(CiResult {
            lower: None,
            upper: None,
            empty: true,
            lower_at_bracket: false,
            upper_at_bracket: false,
            multi_segment: false,
            segments: Vec::new(),
            tol,
            evaluations: evals,
        });
    }

    let mut segments = Vec::with_capacity(runs.len());
    for &(a, b) in &runs {
        let left = if a == 0 { lo } else { bisect(family, alpha, opts, grid[a - 1], grid[a], tol, &mut evals)? };
        let right = if b == m - 1 { hi } else { bisect(family, alpha, opts, grid[b + 1], grid[b], tol, &mut evals)? };
        segments.push([left, right]);
    }
    Ok(CiResult {
        lower: Some(segments[0][0]),
        upper: Some(segments[segments.len() - 1][1]),
        empty: false,
        lower_at_bracket: runs[0].0 == 0,
        upper_at_bracket: runs[runs.len() - 1].1 == m - 1,
        multi_segment: runs.len() > 1,
        segments,
        tol,
        evaluations: evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    // μ ≤ θ with μ̄ = 0: accepted for θ ≥ −cv/√n-ish
    fn half_line() -> ProblemFamily {
        let spec = ProblemSpec::new(Matrix::identity(1, 1), Matrix::zeros(1, 0), Vector::zeros(1), vec![], 100).unwrap();
        let est = Estimates { mu_bar: Vector::zeros(1), pi_bar: Matrix::zeros(1, 0), omega_bar: Matrix::identity(1, 1) };
        ProblemFamily::affine(spec, est, Vector::from_vec(vec![1.0]), Vector::zeros(1)).unwrap()
    }

    #[test]
    fn half_line_lower_endpoint() {
        let r = invert_test(&half_line(), 0.05, (-1.0, 1.0), &CiOptions::default()).unwrap();
        // T = 100 θ² for θ < 0 with one degree of freedom
        let edge = -(3.841458820694124f64).sqrt() / 10.0;
        assert!((r.lower.unwrap() - edge).abs() <= r.tol);
        assert!(r.upper_at_bracket && !r.lower_at_bracket && !r.multi_segment);
    }

    #[test]
    fn everything_rejected() {
        let r = invert_test(&half_line(), 0.05, (-3.0, -2.0), &CiOptions::default()).unwrap();
        assert!(r.empty && r.lower.is_none());
    }

    #[test]
    fn bad_bracket() {
        assert!(invert_test(&half_line(), 0.05, (1.0, 1.0), &CiOptions::default()).is_err());
    }
}
