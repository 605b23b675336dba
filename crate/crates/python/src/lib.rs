//! Python bindings. Matrices cross the boundary as lists of rows; results
//! come back as plain dicts.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use ineqgcc::ci::{invert_test as invert, CiOptions};
use ineqgcc::io::{FamilyFile, ProblemFile};
use ineqgcc::linalg::RankTolerance;
use ineqgcc::qp::{solve_restricted_qp as solve_qp, QpProblem};
use ineqgcc::{distributions, run_test, Error, Estimates, GccOptions, Matrix, ProblemSpec, Variant, Vector};

create_exception!(ineqgcc_py, InfeasibleError, PyException);
create_exception!(ineqgcc_py, NumericalError, PyException);

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::GuardExceeded(_) => PyValueError::new_err(e.to_string()),
        Error::Infeasible { .. } => InfeasibleError::new_err(e.to_string()),
        _ => NumericalError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(PyValueError::new_err(format!("{name}: rows have different lengths")));
    }
    Ok(Matrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// A test problem: the known structure plus the estimates.
#[pyclass(module = "ineqgcc_py", skip_from_py_object)]
#[derive(Clone)]
struct Problem {
    spec: ProblemSpec,
    est: Estimates,
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (b, d, mu_bar, omega, n, d_mat = None, pi_bar = None, eq_indices = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        b: Vec<Vec<f64>>,
        d: Vec<f64>,
        mu_bar: Vec<f64>,
        omega: Vec<Vec<f64>>,
        n: usize,
        d_mat: Option<Vec<Vec<f64>>>,
        pi_bar: Option<Vec<Vec<f64>>>,
        eq_indices: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let f = ProblemFile {
            n,
            b,
            d_mat: d_mat.unwrap_or_default(),
            d,
            eq_indices: eq_indices.unwrap_or_default(),
            mu_bar,
            pi_bar: pi_bar.unwrap_or_default(),
            omega,
        };
        let (spec, est) = f.to_problem().map_err(to_py_err)?;
        Ok(Problem { spec, est })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (spec, est) = ProblemFile::from_json(text).and_then(|f| f.to_problem()).map_err(to_py_err)?;
        Ok(Problem { spec, est })
    }

    fn to_json(&self) -> String {
        ProblemFile::from_problem(&self.spec, &self.est).to_json()
    }

    /// `(d_C, d_mu, d_delta)`
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        (self.spec.d_c(), self.spec.d_mu(), self.spec.d_delta())
    }

    #[getter]
    fn n(&self) -> usize {
        self.spec.n
    }

    fn __repr__(&self) -> String {
        let (c, m, d) = self.dims();
        format!("Problem(d_C={c}, d_mu={m}, d_delta={d}, n={})", self.spec.n)
    }
}

fn options(active_tol: Option<f64>, rank_tol: Option<f64>, diagnostics: bool) -> GccOptions {
    let mut o = GccOptions { diagnostics, ..Default::default() };
    if let Some(t) = active_tol {
        o.active_tol = t;
    }
    if let Some(t) = rank_tol {
        o.rank_tol = RankTolerance { relative: t, ..RankTolerance::default() };
    }
    o
}

fn run<'py>(
    py: Python<'py>,
    problem: &Problem,
    alpha: f64,
    variant: Variant,
    opts: GccOptions,
) -> PyResult<Bound<'py, PyAny>> {
    let r = run_test(&problem.spec, &problem.est, alpha, variant, &opts).map_err(to_py_err)?;
    json_to_py(py, &serde_json::to_string(&r).expect("result serialises"))
}

/// GCC test; returns the result as a dict.
#[pyfunction]
#[pyo3(signature = (problem, alpha = 0.05, active_tol = None, rank_tol = None, diagnostics = false))]
fn gcc_test<'py>(
    py: Python<'py>,
    problem: &Problem,
    alpha: f64,
    active_tol: Option<f64>,
    rank_tol: Option<f64>,
    diagnostics: bool,
) -> PyResult<Bound<'py, PyAny>> {
    run(py, problem, alpha, Variant::Gcc, options(active_tol, rank_tol, diagnostics))
}

/// Refined GCC test; returns the result as a dict.
#[pyfunction]
#[pyo3(signature = (problem, alpha = 0.05, active_tol = None, rank_tol = None, diagnostics = false))]
fn rgcc_test<'py>(
    py: Python<'py>,
    problem: &Problem,
    alpha: f64,
    active_tol: Option<f64>,
    rank_tol: Option<f64>,
    diagnostics: bool,
) -> PyResult<Bound<'py, PyAny>> {
    run(py, problem, alpha, Variant::Rgcc, options(active_tol, rank_tol, diagnostics))
}

#[pyfunction]
fn chi2_quantile(dof: usize, p: f64) -> PyResult<f64> {
    distributions::chi2_quantile(dof, p).map_err(to_py_err)
}

#[pyfunction]
fn cv(dof: usize, alpha: f64) -> PyResult<f64> {
    distributions::cv(dof, alpha).map_err(to_py_err)
}

#[pyfunction]
fn normal_cdf(x: f64) -> PyResult<f64> {
    distributions::normal_cdf(x).map_err(to_py_err)
}

/// Project `center` onto `{μ : ∃δ, Bμ + Cδ ≤ d}` in the `weight` norm.
#[pyfunction]
fn solve_restricted_qp<'py>(
    py: Python<'py>,
    weight: Vec<Vec<f64>>,
    center: Vec<f64>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let dc = d.len();
    let mut bm = rows_to_matrix("B", &b)?;
    let mut cm = rows_to_matrix("C", &c)?;
    if b.is_empty() {
        bm = Matrix::zeros(dc, center.len());
    }
    if c.is_empty() {
        cm = Matrix::zeros(dc, 0);
    }
    let p = QpProblem::new(rows_to_matrix("weight", &weight)?, Vector::from_vec(center), bm, cm, Vector::from_vec(d))
        .map_err(to_py_err)?;
    let s = solve_qp(&p).map_err(to_py_err)?;
    let v = serde_json::json!({
        "mu_hat": s.mu_hat.as_slice(),
        "delta_hat": s.delta_hat.as_slice(),
        "psi_hat": s.psi_hat.as_slice(),
        "objective": s.objective,
        "active_set": s.active_set,
        "kkt_residual": s.kkt_residual,
    });
    json_to_py(py, &v.to_string())
}

/// One draw of the one-sided simulation model.
#[pyfunction]
#[pyo3(signature = (j, q, n, theta, seed))]
fn simple_dgp(j: usize, q: f64, n: usize, theta: f64, seed: u64) -> PyResult<Problem> {
    let (spec, est) = ineqgcc::sim::simple_dgp(j, q, n, theta, seed).map_err(to_py_err)?;
    Ok(Problem { spec, est })
}

/// Confidence interval by test inversion for a family file (JSON text).
#[pyfunction]
#[pyo3(signature = (family_json, lo, hi, alpha = 0.05, variant = "gcc", tol = None, grid = 64))]
#[allow(clippy::too_many_arguments)]
fn invert_test<'py>(
    py: Python<'py>,
    family_json: &str,
    lo: f64,
    hi: f64,
    alpha: f64,
    variant: &str,
    tol: Option<f64>,
    grid: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let family = FamilyFile::from_json(family_json).and_then(|f| f.to_family()).map_err(to_py_err)?;
    let variant: Variant = variant.parse().map_err(to_py_err)?;
    let opts = CiOptions { variant, grid, tol, test: GccOptions::default() };
    let r = invert(&family, alpha, (lo, hi), &opts).map_err(to_py_err)?;
    json_to_py(py, &serde_json::to_string(&r).expect("interval serialises"))
}

#[pymodule]
fn ineqgcc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(gcc_test, m)?)?;
    m.add_function(wrap_pyfunction!(rgcc_test, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(cv, m)?)?;
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(solve_restricted_qp, m)?)?;
    m.add_function(wrap_pyfunction!(simple_dgp, m)?)?;
    m.add_function(wrap_pyfunction!(invert_test, m)?)?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}
