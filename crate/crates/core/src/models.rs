//! Builders that put moment (in)equality models and LP-bounded parameters
//! into the `B, D, d` form, plus reduced-form estimation from per-observation
//! moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::gcc::{Estimates, ProblemSpec};
use crate::linalg::{check_finite_matrix, check_finite_vector, pinv, rank, symmetrize, RankTolerance};
use crate::{Matrix, Vector};

/// Structure of a moment (in)equality model before the sample size is known.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStructure {
    pub b: Matrix,
    pub d: Vector,
    pub eq_indices: Vec<usize>,
    pub d_delta: usize,
}

impl MomentStructure {
    /// A spec with `D = 0`.
    pub fn spec(&self, n: usize) -> Result<ProblemSpec> {
        ProblemSpec::new(
            self.b.clone(),
            Matrix::zeros(self.b.nrows(), self.d_delta),
            self.d.clone(),
            self.eq_indices.clone(),
            n,
        )
    }
}

/// Specification test for `E m_eq = 0, E m_ineq ≥ 0`: equalities become
/// opposing pairs in the first `2·d_eq` rows.
pub fn build_spec_test(d_eq: usize, d_ineq: usize) -> Result<MomentStructure> {
    build_subvector(d_eq, d_ineq, 0)
}

/// Same rows as [`build_spec_test`] with `d_delta` nuisance columns.
pub fn build_subvector(d_eq: usize, d_ineq: usize, d_delta: usize) -> Result<MomentStructure> {
    if d_eq + d_ineq == 0 {
        return invalid("a moment model needs at least one moment");
    }
    let d_m = d_eq + d_ineq;
    let rows = 2 * d_eq + d_ineq;
    let mut b = Matrix::zeros(rows, d_m);
    for i in 0..d_eq {
        b[(i, i)] = -1.0;
        b[(d_eq + i, i)] = 1.0;
    }
    for i in 0..d_ineq {
        b[(2 * d_eq + i, d_eq + i)] = -1.0;
    }
    Ok(MomentStructure { b, d: Vector::zeros(rows), eq_indices: (0..2 * d_eq).collect(), d_delta })
}

/// The target weights of an LP-bounded parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Known(Vector),
    /// estimated weights, entering `Π̄` as an extra row
    Estimated(Vector),
}

/// `θ = γ'δ`, `Γδ = m`, `Aδ ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub gamma: Target,
    pub gamma_mat: Matrix,
    pub m: Vector,
    pub a: Matrix,
    pub b: Vector,
    pub theta: f64,
}

/// An LP model written as a GCC problem. Pair with a covariance for `μ̄`
/// and `vec(Π̄)` via [`LpTranslation::estimates`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpTranslation {
    pub spec: ProblemSpec,
    pub mu_bar: Vector,
    pub pi_bar: Matrix,
    /// `d(θ) = d₀ + θ·d_slope`
    pub d_slope: Vector,
}

impl LpTranslation {
    pub fn estimates(&self, omega_bar: Matrix) -> Result<Estimates> {
        let e = Estimates { mu_bar: self.mu_bar.clone(), pi_bar: self.pi_bar.clone(), omega_bar };
        e.check_against(&self.spec)?;
        Ok(e)
    }
}

pub fn build_lp_bounds(model: &LpModel, n: usize) -> Result<LpTranslation> {
    check_finite_matrix(&model.gamma_mat, "Gamma")?;
    check_finite_matrix(&model.a, "A")?;
    check_finite_vector(&model.m, "m")?;
    check_finite_vector(&model.b, "b")?;
    let d_g = model.gamma_mat.nrows();
    let d_delta = model.gamma_mat.ncols();
    let d_a = model.a.nrows();
    if model.m.len() != d_g {
        return invalid(format!("m has length {} but Gamma has {d_g} rows", model.m.len()));
    }
    if model.a.ncols() != d_delta && d_a > 0 {
        return invalid(format!("A has {} columns but Gamma has {d_delta}", model.a.ncols()));
    }
    if model.b.len() != d_a {
        return invalid(format!("b has length {} but A has {d_a} rows", model.b.len()));
    }
    let gamma = match &model.gamma {
        Target::Known(g) | Target::Estimated(g) => g,
    };
    if gamma.len() != d_delta {
        return invalid(format!("gamma has length {} but Gamma has {d_delta} columns", gamma.len()));
    }
    if !model.theta.is_finite() {
        return invalid("theta must be finite");
    }
    let rows = 2 + 2 * d_g + d_a;
    let mut d = Vector::zeros(rows);
    d[0] = model.theta;
    d[1] = -model.theta;
    d.rows_mut(2 + 2 * d_g, d_a).copy_from(&model.b);
    let mut d_slope = Vector::zeros(rows);
    d_slope[0] = 1.0;
    d_slope[1] = -1.0;

    let mut d_mat = Matrix::zeros(rows, d_delta);
    if d_a > 0 {
        d_mat.view_mut((2 + 2 * d_g, 0), (d_a, d_delta)).copy_from(&model.a);
    }
    let (b, mu_bar, pi_bar) = match &model.gamma {
        Target::Known(g) => {
            d_mat.row_mut(0).copy_from(&g.transpose());
            d_mat.row_mut(1).copy_from(&(-g.transpose()));
            let mut b = Matrix::zeros(rows, d_g);
            for i in 0..d_g {
                b[(2 + i, i)] = 1.0;
                b[(2 + d_g + i, i)] = -1.0;
            }
            (b, -&model.m, model.gamma_mat.clone())
        }
        Target::Estimated(g) => {
            let mut b = Matrix::zeros(rows, 1 + d_g);
            b[(0, 0)] = 1.0;
            b[(1, 0)] = -1.0;
            for i in 0..d_g {
                b[(2 + i, 1 + i)] = 1.0;
                b[(2 + d_g + i, 1 + i)] = -1.0;
            }
            let mut mu = Vector::zeros(1 + d_g);
            mu.rows_mut(1, d_g).copy_from(&(-&model.m));
            let mut pi = Matrix::zeros(1 + d_g, d_delta);
            pi.row_mut(0).copy_from(&g.transpose());
            pi.view_mut((1, 0), (d_g, d_delta)).copy_from(&model.gamma_mat);
            (b, mu, pi)
        }
    };
    let eq_indices = (0..2 + 2 * d_g).collect();
    let spec = ProblemSpec::new(b, d_mat, d, eq_indices, n)?;
    Ok(LpTranslation { spec, mu_bar, pi_bar, d_slope })
}

/// Orthonormal rows spanning the orthogonal complement of the row space of
/// `lambda`, so that `[Λ; Λᶜ]` is nonsingular.
pub fn reparameterize_null(lambda: &Matrix) -> Result<Matrix> {
    check_finite_matrix(lambda, "Lambda")?;
    let (dt, db) = lambda.shape();
    if dt == 0 || dt > db || rank(lambda, RankTolerance::default())? != dt {
        return invalid(format!("Lambda ({dt}x{db}) must have full row rank"));
    }
    let proj = Matrix::identity(db, db) - pinv(lambda)? * lambda;
    let eig = symmetrize(&proj).symmetric_eigen();
    let mut cols: Vec<usize> = (0..db).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    cols.sort_by(|&a, &b| {
        let ka = eig.eigenvectors.column(a).iamax();
        let kb = eig.eigenvectors.column(b).iamax();
        ka.cmp(&kb).then(a.cmp(&b))
    });
    let mut out = Matrix::zeros(cols.len(), db);
    for (r, &c) in cols.iter().enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let k = v.iamax();
        if v[k] < 0.0 {
            v.neg_mut();
        }
        out.row_mut(r).copy_from(&v.transpose());
    }
    Ok(out)
}

/// Per-observation moment levels and Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentData {
    /// `n × d_μ`
    pub g_obs: Matrix,
    /// `n` blocks of `d_μ × d_δ`
    pub jac_obs: Vec<Matrix>,
    pub cluster_ids: Option<Vec<u64>>,
}

impl MomentData {
    pub fn n(&self) -> usize {
        self.g_obs.nrows()
    }

    pub fn d_mu(&self) -> usize {
        self.g_obs.ncols()
    }

    pub fn d_delta(&self) -> usize {
        self.jac_obs.first().map_or(0, |m| m.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 2 {
            return invalid(format!("need at least 2 observations, got {n}"));
        }
        check_finite_matrix(&self.g_obs, "g_obs")?;
        if !self.jac_obs.is_empty() && self.jac_obs.len() != n {
            return invalid(format!("{} Jacobian blocks for {n} observations", self.jac_obs.len()));
        }
        let dd = self.d_delta();
        for (i, g) in self.jac_obs.iter().enumerate() {
            if g.nrows() != self.d_mu() || g.ncols() != dd {
                return invalid(format!("Jacobian block {i} has shape {:?}", g.shape()));
            }
            check_finite_matrix(g, "jac_obs")?;
        }
        if let Some(c) = &self.cluster_ids {
            if c.len() != n {
                return invalid(format!("{} cluster ids for {n} observations", c.len()));
            }
        }
        Ok(())
    }

    /// Row `i` is `(g_i', vec(G_i)')`.
    pub fn stacked(&self) -> Matrix {
        let n = self.n();
        let dm = self.d_mu();
        let dd = self.d_delta();
        let mut z = Matrix::zeros(n, dm * (1 + dd));
        z.view_mut((0, 0), (n, dm)).copy_from(&self.g_obs);
        for (i, g) in self.jac_obs.iter().enumerate() {
            for c in 0..dd {
                for r in 0..dm {
                    z[(i, dm + c * dm + r)] = g[(r, c)];
                }
            }
        }
        z
    }
}

/// Column means and the divide-by-`(n−1)` covariance of the rows of `z`.
pub fn mean_and_covariance(z: &Matrix) -> (Vector, Matrix) {
    let n = z.nrows();
    let mean = z.row_mean().transpose();
    let mut centered = z.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    (mean, symmetrize(&cov))
}

fn split_stacked(mean: &Vector, dm: usize, dd: usize) -> (Vector, Matrix) {
    let mu = mean.rows(0, dm).into_owned();
    let mut pi = Matrix::zeros(dm, dd);
    for c in 0..dd {
        for r in 0..dm {
            pi[(r, c)] = mean[dm + c * dm + r];
        }
    }
    (mu, pi)
}

/// Sample means and the per-observation covariance of the stacked vector.
pub fn estimates_from_observations(data: &MomentData) -> Result<Estimates> {
    data.validate()?;
    let (mean, cov) = mean_and_covariance(&data.stacked());
    let (mu_bar, pi_bar) = split_stacked(&mean, data.d_mu(), data.d_delta());
    Ok(Estimates { mu_bar, pi_bar, omega_bar: cov })
}

/// Cluster bootstrap estimate of `Ω̄` (scaled by `n`). Without cluster ids
/// every observation is its own cluster.
pub fn bootstrap_omega(data: &MomentData, reps: usize, seed: u64) -> Result<Matrix> {
    data.validate()?;
    if reps < 2 {
        return invalid(format!("bootstrap needs at least 2 replications, got {reps}"));
    }
    let n = data.n();
    let clusters: Vec<Vec<usize>> = match &data.cluster_ids {
        None => (0..n).map(|i| vec![i]).collect(),
        Some(ids) => {
            let mut order: Vec<u64> = ids.clone();
            order.sort_unstable();
            order.dedup();
            let mut groups = vec![Vec::new(); order.len()];
            for (i, id) in ids.iter().enumerate() {
                let k = order.binary_search(id).expect("id present");
                groups[k].push(i);
            }
            groups
        }
    };
    let g = clusters.len();
    if g < 2 {
        return invalid("bootstrap needs at least two clusters");
    }
    let z = data.stacked();
    let p = z.ncols();
    let cluster_sums: Vec<Vector> = clusters
        .iter()
        .map(|c| c.iter().fold(Vector::zeros(p), |acc, &i| acc + z.row(i).transpose()))
        .collect();
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();

    let means: Vec<Vector> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut sum = Vector::zeros(p);
            let mut count = 0usize;
            for _ in 0..g {
                let k = rng.random_range(0..g);
                sum += &cluster_sums[k];
                count += sizes[k];
            }
            sum / count as f64
        })
        .collect();
    let mut m = Matrix::zeros(reps, p);
    for (r, v) in means.iter().enumerate() {
        m.row_mut(r).copy_from(&v.transpose());
    }
    let (_, cov) = mean_and_covariance(&m);
    Ok(cov * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_test_rows() {
        let s = build_spec_test(1, 0).unwrap();
        assert_eq!(s.b, Matrix::from_row_slice(2, 1, &[-1.0, 1.0]));
        assert_eq!(s.eq_indices, vec![0, 1]);
        let s = build_spec_test(0, 3).unwrap();
        assert_eq!(s.b, -Matrix::identity(3, 3));
        let s = build_spec_test(2, 2).unwrap();
        assert_eq!(s.b.nrows(), 6);
        assert_eq!(rank(&s.b, RankTolerance::default()).unwrap(), 4);
        assert!(build_spec_test(0, 0).is_err());
    }

    #[test]
    fn lp_known_and_estimated_targets() {
        let model = LpModel {
            gamma: Target::Known(Vector::from_vec(vec![1.0, 0.0])),
            gamma_mat: Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
            m: Vector::from_vec(vec![1.0]),
            a: Matrix::zeros(0, 2),
            b: Vector::zeros(0),
            theta: 0.3,
        };
        let t = build_lp_bounds(&model, 10).unwrap();
        assert_eq!(t.spec.b, Matrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, -1.0]));
        assert_eq!(t.spec.d, Vector::from_vec(vec![0.3, -0.3, 0.0, 0.0]));
        let model = LpModel { gamma: Target::Estimated(Vector::from_vec(vec![1.0, 0.0])), ..model };
        let t = build_lp_bounds(&model, 10).unwrap();
        assert_eq!(t.spec.b.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(t.mu_bar[0], 0.0);
    }

    #[test]
    fn complement_of_first_axis() {
        let lc = reparameterize_null(&Matrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        assert!((lc[(0, 0)]).abs() < 1e-15 && (lc[(0, 1)] - 1.0).abs() < 1e-15);
        assert!(reparameterize_null(&Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn two_observation_covariance() {
        let data = MomentData {
            g_obs: Matrix::from_column_slice(2, 1, &[0.0, 2.0]),
            jac_obs: vec![Matrix::zeros(1, 0), Matrix::zeros(1, 0)],
            cluster_ids: None,
        };
        let e = estimates_from_observations(&data).unwrap();
        assert_eq!(e.mu_bar[0], 1.0);
        assert_eq!(e.omega_bar[(0, 0)], 2.0);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let data = MomentData {
            g_obs: Matrix::from_fn(20, 2, |i, j| ((i * 7 + j * 3) % 5) as f64),
            jac_obs: Vec::new(),
            cluster_ids: None,
        };
        let a = bootstrap_omega(&data, 50, 9).unwrap();
        let b = bootstrap_omega(&data, 50, 9).unwrap();
        assert_eq!(a, b);
        let single = MomentData { cluster_ids: Some(vec![1; 20]), ..data };
        assert!(bootstrap_omega(&single, 50, 9).is_err());
    }
}
