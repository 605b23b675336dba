//! Vertex enumeration for `{h ≥ 0 : h'C = 0, h'1 = 1}` and the projected
//! representation `{μ : ∃δ, Bμ + Cδ ≤ d} = {μ : Aμ ≤ g}` with `A = HB`,
//! `g = Hd`.
//!
//! Vertices are basic feasible solutions of the equality system
//! `[C'; 1'] h = e`, found by walking every column support up to the rank of
//! the system. This is exponential in `d_δ` and only meant for the moderate
//! sizes of the diagnostic DoF and the refinement step.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::{check_finite_matrix, check_finite_vector, RankTolerance};
use crate::{Matrix, Vector};

pub const MAX_ROWS: usize = 40;
pub const MAX_NUISANCE: usize = 10;
/// Upper limit on the number of supports visited.
pub const MAX_SUPPORTS: u64 = 5_000_000;

const DEDUP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRep {
    /// vertices, one per row
    pub h: Matrix,
    pub a: Matrix,
    pub g: Vector,
}

impl ProjectedRep {
    pub fn d_a(&self) -> usize {
        self.h.nrows()
    }

    /// Rows of `A` holding with equality at `mu`, with the same relative
    /// scaling as the QP active set.
    pub fn active_rows(&self, mu: &Vector, tol: f64) -> Vec<usize> {
        let mn = mu.norm();
        let am = &self.a * mu;
        (0..self.d_a())
            .filter(|&j| {
                let scale = 1.0 + self.g[j].abs() + self.a.row(j).norm() * mn;
                (am[j] - self.g[j]).abs() <= tol * scale
            })
            .collect()
    }

    /// Whether `mu` satisfies `Aμ ≤ g` up to a relative slack.
    pub fn contains(&self, mu: &Vector, tol: f64) -> bool {
        let mn = mu.norm();
        let am = &self.a * mu;
        (0..self.d_a()).all(|j| am[j] - self.g[j] <= tol * (1.0 + self.g[j].abs() + self.a.row(j).norm() * mn))
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
        if r > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    r as u64
}

fn check_guard(d_c: usize, d_delta: usize, depth: usize) -> Result<()> {
    if d_c > MAX_ROWS || d_delta > MAX_NUISANCE {
        return Err(Error::GuardExceeded(format!(
            "vertex enumeration limited to {MAX_ROWS} rows and {MAX_NUISANCE} nuisance columns (got {d_c}, {d_delta})"
        )));
    }
    let total: u64 = (1..=depth.min(d_c)).map(|k| binomial(d_c, k)).fold(0u64, |a, b| a.saturating_add(b));
    if total > MAX_SUPPORTS {
        return Err(Error::GuardExceeded(format!(
            "vertex enumeration would visit {total} supports (limit {MAX_SUPPORTS})"
        )));
    }
    Ok(())
}

/// Advance `idx` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Solve `m_S h = e_last` on the columns `s`; returns the strictly positive
/// solution when the columns are independent and the system is consistent.
fn support_solution(m: &Matrix, s: &[usize]) -> Option<Vec<f64>> {
    let rows = m.nrows();
    let k = s.len();
    let mut sub = Matrix::zeros(rows, k);
    for (c, &j) in s.iter().enumerate() {
        sub.column_mut(c).copy_from(&m.column(j));
    }
    let mut rhs = Vector::zeros(rows);
    rhs[rows - 1] = 1.0;
    let qr = sub.clone().qr();
    let r = qr.r();
    let rmax = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * rmax.max(1.0)) {
        return None;
    }
    let qtb = qr.q().transpose() * &rhs;
    let x = r.solve_upper_triangular(&qtb)?;
    let resid = (&sub * &x - &rhs).amax();
    if resid > 1e-10 {
        return None;
    }
    let xmax = x.amax();
    if x.iter().any(|&v| v <= 1e-12 * xmax.max(1.0)) {
        return None;
    }
    Some(x.iter().copied().collect())
}

/// All vertices of `{h ≥ 0 : h'C = 0, h'1 = 1}`, one per row, sorted
/// lexicographically. Returns a `0 × d_C` matrix when the polytope is empty.
pub fn enumerate_vertices(c: &Matrix) -> Result<Matrix> {
    check_finite_matrix(c, "C")?;
    let d_c = c.nrows();
    let d_delta = c.ncols();
    if d_c == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    // Only the column space of C matters; an orthonormal basis keeps the
    // support systems well conditioned.
    let basis = if d_delta == 0 {
        Matrix::zeros(d_c, 0)
    } else {
        let svd = c.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1e-10 * smax && smax > 0.0)
            .collect();
        let mut b = Matrix::zeros(d_c, keep.len());
        for (k, &i) in keep.iter().enumerate() {
            b.column_mut(k).copy_from(&u.column(i));
        }
        b
    };
    let rc = basis.ncols();
    let mut m = Matrix::zeros(rc + 1, d_c);
    m.view_mut((0, 0), (rc, d_c)).copy_from(&basis.transpose());
    m.row_mut(rc).fill(1.0);
    let depth = crate::linalg::rank(&m, RankTolerance::default())?;
    check_guard(d_c, d_delta, depth)?;

    let mut found: Vec<Vec<f64>> = Vec::new();
    for k in 1..=depth.min(d_c) {
        let starts: Vec<usize> = (0..=d_c - k).collect();
        // split by first index so the work parallelises; the final sort makes
        // the output independent of scheduling
        let chunk: Vec<Vec<f64>> = starts
            .par_iter()
            .flat_map_iter(|&first| {
                let mut out = Vec::new();
                let mut idx: Vec<usize> = (first..first + k).collect();
                loop {
                    if idx[0] != first {
                        break;
                    }
                    if let Some(x) = support_solution(&m, &idx) {
                        let mut h = vec![0.0; d_c];
                        for (p, &j) in idx.iter().enumerate() {
                            h[j] = x[p];
                        }
                        out.push(h);
                    }
                    if !next_combination(&mut idx, d_c) {
                        break;
                    }
                }
                out
            })
            .collect();
        found.extend(chunk);
    }

    found.sort_by(|a, b| {
        for (x, y) in a.iter().zip(b.iter()) {
            if (x - y).abs() > DEDUP_TOL {
                return x.total_cmp(y);
            }
        }
        std::cmp::Ordering::Equal
    });
    found.dedup_by(|a, b| a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= DEDUP_TOL));

    let mut h = Matrix::zeros(found.len(), d_c);
    for (i, v) in found.iter().enumerate() {
        for j in 0..d_c {
            h[(i, j)] = v[j];
        }
    }
    Ok(h)
}

/// The projected representation of `{μ : ∃δ, Bμ + Cδ ≤ d}`.
pub fn project_polyhedron(b: &Matrix, c: &Matrix, d: &Vector) -> Result<ProjectedRep> {
    check_finite_matrix(b, "B")?;
    check_finite_vector(d, "d")?;
    if b.nrows() != c.nrows() || d.len() != c.nrows() {
        return invalid(format!(
            "row mismatch: B has {}, C has {}, d has {}",
            b.nrows(),
            c.nrows(),
            d.len()
        ));
    }
    let mut h = enumerate_vertices(c)?;
    if h.ncols() != c.nrows() {
        h = Matrix::zeros(0, c.nrows());
    }
    let a = &h * b;
    let g = &h * d;
    Ok(ProjectedRep { h, a, g })
}
