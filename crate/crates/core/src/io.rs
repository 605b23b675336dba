//! JSON file formats.
//!
//! Matrices are row-major arrays of arrays. A matrix with no columns may be
//! written either as `[]` or as one empty array per row. Row indices in
//! `eq_indices` are 0-based.

use serde::{Deserialize, Serialize};

use crate::ci::ProblemFamily;
use crate::error::{invalid, Error, Result};
use crate::gcc::{Estimates, ProblemSpec};
use crate::sim::Scenario;
use crate::{Matrix, Variant, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "D", default)]
    pub d_mat: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    #[serde(default)]
    pub eq_indices: Vec<usize>,
    pub mu_bar: Vec<f64>,
    #[serde(rename = "Pi_bar", default)]
    pub pi_bar: Vec<Vec<f64>>,
    #[serde(rename = "Omega")]
    pub omega: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub n: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "D", default)]
    pub d_mat: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    #[serde(default)]
    pub eq_indices: Vec<usize>,
    pub mu_bar: Vec<f64>,
    #[serde(rename = "Pi_bar", default)]
    pub pi_bar: Vec<Vec<f64>>,
    #[serde(rename = "Omega")]
    pub omega: Vec<Vec<f64>>,
    pub d_slope: Vec<f64>,
    #[serde(default)]
    pub mu_slope: Option<Vec<f64>>,
}

/// How the θ values of a scenario file are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaUnits {
    #[default]
    Raw,
    /// multiples of `1/√n`
    InvSqrtN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenarios: Vec<Scenario>,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub theta_units: ThetaUnits,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Gcc, Variant::Rgcc]
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return invalid("scenarios: at least one scenario is required");
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate().map_err(|e| Error::InvalidInput(format!("scenarios[{i}]: {e}")))?;
        }
        if self.theta.is_empty() {
            return invalid("theta: at least one value is required");
        }
        if let Some(t) = self.theta.iter().find(|t| !t.is_finite()) {
            return invalid(format!("theta: non-finite value {t}"));
        }
        if self.reps == 0 {
            return invalid("reps: must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return invalid(format!("alpha: must lie in (0, 0.5), got {}", self.alpha));
        }
        if self.variants.is_empty() {
            return invalid("variants: at least one variant is required");
        }
        Ok(())
    }

    /// θ values for `scenario` in raw units.
    pub fn grid_for(&self, scenario: &Scenario) -> Vec<f64> {
        let k = match self.theta_units {
            ThetaUnits::Raw => 1.0,
            ThetaUnits::InvSqrtN => 1.0 / (scenario.sample_size() as f64).sqrt(),
        };
        self.theta.iter().map(|t| t * k).collect()
    }
}

/// Parse errors carry the line and column of the offending token.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::InvalidInput(format!("{what}: line {} column {}: {e}", e.line(), e.column()))
    })
}

fn matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<Matrix> {
    if ncols == 0 && (rows.is_empty() || rows.iter().all(|r| r.is_empty())) && (rows.is_empty() || rows.len() == nrows) {
        return Ok(Matrix::zeros(nrows, 0));
    }
    if rows.len() != nrows {
        return invalid(format!("{name}: expected {nrows} rows, got {}", rows.len()));
    }
    let mut m = Matrix::zeros(nrows, ncols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return invalid(format!("{name}: row {i} has {} entries, expected {ncols}", r.len()));
        }
        for (j, v) in r.iter().enumerate() {
            if !v.is_finite() {
                return invalid(format!("{name}[{i}][{j}] is not finite"));
            }
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

fn vector(name: &str, v: &[f64], len: usize) -> Result<Vector> {
    if v.len() != len {
        return invalid(format!("{name}: expected length {len}, got {}", v.len()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return invalid(format!("{name}[{i}] is not finite"));
    }
    Ok(Vector::from_column_slice(v))
}

fn width(rows: &[Vec<f64>]) -> usize {
    rows.first().map_or(0, |r| r.len())
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[allow(clippy::too_many_arguments)]
fn build(
    n: usize,
    b: &[Vec<f64>],
    d_mat: &[Vec<f64>],
    d: &[f64],
    eq_indices: &[usize],
    mu_bar: &[f64],
    pi_bar: &[Vec<f64>],
    omega: &[Vec<f64>],
) -> Result<(ProblemSpec, Estimates)> {
    let dc = d.len();
    let dm = mu_bar.len();
    let dd = width(d_mat);
    if n == 0 {
        return invalid("n: must be at least 1");
    }
    let b = matrix("B", b, dc, dm)?;
    let d_mat = matrix("D", d_mat, dc, dd)?;
    let d = vector("d", d, dc)?;
    if let Some(&j) = eq_indices.iter().find(|&&j| j >= dc) {
        return invalid(format!("eq_indices: index {j} out of range for {dc} rows"));
    }
    let spec = ProblemSpec::new(b, d_mat, d, eq_indices.to_vec(), n)?;
    let side = dm * (1 + dd);
    let est = Estimates {
        mu_bar: vector("mu_bar", mu_bar, dm)?,
        pi_bar: matrix("Pi_bar", pi_bar, dm, dd)?,
        omega_bar: matrix("Omega", omega, side, side)?,
    };
    est.check_against(&spec)?;
    Ok((spec, est))
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "problem file")
    }

    pub fn to_problem(&self) -> Result<(ProblemSpec, Estimates)> {
        build(self.n, &self.b, &self.d_mat, &self.d, &self.eq_indices, &self.mu_bar, &self.pi_bar, &self.omega)
    }

    pub fn from_problem(spec: &ProblemSpec, est: &Estimates) -> Self {
        ProblemFile {
            n: spec.n,
            b: to_rows(&spec.b),
            d_mat: to_rows(&spec.d_mat),
            d: spec.d.iter().copied().collect(),
            eq_indices: spec.eq_indices.clone(),
            mu_bar: est.mu_bar.iter().copied().collect(),
            pi_bar: to_rows(&est.pi_bar),
            omega: to_rows(&est.omega_bar),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serialises")
    }
}

impl FamilyFile {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "family file")
    }

    pub fn to_family(&self) -> Result<ProblemFamily> {
        let (spec, est) =
            build(self.n, &self.b, &self.d_mat, &self.d, &self.eq_indices, &self.mu_bar, &self.pi_bar, &self.omega)?;
        let d_slope = vector("d_slope", &self.d_slope, spec.d_c())?;
        let mu_slope = match &self.mu_slope {
            Some(v) => vector("mu_slope", v, spec.d_mu())?,
            None => Vector::zeros(spec.d_mu()),
        };
        ProblemFamily::affine(spec, est, d_slope, mu_slope)
    }

    pub fn from_parts(spec: &ProblemSpec, est: &Estimates, d_slope: &Vector, mu_slope: &Vector) -> Self {
        let p = ProblemFile::from_problem(spec, est);
        FamilyFile {
            n: p.n,
            b: p.b,
            d_mat: p.d_mat,
            d: p.d,
            eq_indices: p.eq_indices,
            mu_bar: p.mu_bar,
            pi_bar: p.pi_bar,
            omega: p.omega,
            d_slope: d_slope.iter().copied().collect(),
            mu_slope: Some(mu_slope.iter().copied().collect()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("family file serialises")
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScenarioFile = parse_json(text, "scenario file")?;
        f.validate()?;
        Ok(f)
    }
}
