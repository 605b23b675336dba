//! Shared oracles and instance generators for the integration tests.
#![allow(dead_code)]

use ineqgcc::{Estimates, Matrix, ProblemSpec, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the generators independent of the library's sampler
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gauss_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| gauss(rng))
}

pub fn gauss_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| gauss(rng))
}

/// Random symmetric positive definite matrix with eigenvalues bounded away
/// from zero.
pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = gauss_matrix(rng, n, n);
    &a * a.transpose() / n as f64 + Matrix::identity(n, n) * 0.5
}

/// Well-conditioned random invertible matrix.
pub fn invertible(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    loop {
        let s = Matrix::identity(n, n) + gauss_matrix(rng, n, n) * 0.3;
        let sv = s.clone().singular_values();
        if sv.min() > 0.3 && sv.max() / sv.min() < 20.0 {
            return s;
        }
    }
}

/// The degenerate two-row instance: B = (0,1)', D = (1,1)', d = 0.
pub fn degenerate_pair() -> (ProblemSpec, Estimates) {
    let spec = ProblemSpec::new(
        Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        Matrix::from_row_slice(2, 1, &[1.0, 1.0]),
        Vector::zeros(2),
        vec![],
        1,
    )
    .unwrap();
    let est = Estimates { mu_bar: Vector::zeros(1), pi_bar: Matrix::zeros(1, 1), omega_bar: Matrix::identity(2, 2) };
    (spec, est)
}

/// Random test instance with a nonempty sample constraint set: `d` is built
/// from a feasible `(μ*, δ*)` plus nonnegative slack, with roughly a third of
/// the rows tight at that point.
pub fn random_instance(rng: &mut ChaCha8Rng, dc: usize, dm: usize, dd: usize, n: usize) -> (ProblemSpec, Estimates) {
    let b = gauss_matrix(rng, dc, dm);
    let d_mat = gauss_matrix(rng, dc, dd);
    let pi_bar = gauss_matrix(rng, dm, dd) * 0.5;
    let c_bar = &d_mat + &b * &pi_bar;
    let mu_star = gauss_vector(rng, dm);
    let delta_star = gauss_vector(rng, dd);
    let mut d = &b * &mu_star + &c_bar * &delta_star;
    for j in 0..dc {
        if rng.random::<f64>() > 0.35 {
            d[j] += rng.random::<f64>();
        }
    }
    let mu_bar = &mu_star + gauss_vector(rng, dm) * 1.5;
    let side = dm * (1 + dd);
    let omega_bar = spd(rng, side);
    let spec = ProblemSpec::new(b, d_mat, d, vec![], n).unwrap();
    (spec, Estimates { mu_bar, pi_bar, omega_bar })
}

// ---------------------------------------------------------------------------
// population identified set of the interval-outcome IV design (d_W = 1)

const MARKET: usize = 100;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bounds(s: f64) -> (f64, f64) {
    let big = 2.0 / MARKET as f64;
    let small = 0.00125;
    ((s + small).ln() - (1.0 - s + big).ln(), (s + big).ln() - (1.0 - s + small).ln())
}

/// `E[(Y^L, Y^U) | s* = p]` with `s_N ~ Binomial(N, p)/N`, by exact summation.
fn expected_bounds(p: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let mut pmf = q.powi(MARKET as i32);
    let (mut lo, mut hi) = (0.0, 0.0);
    for k in 0..=MARKET {
        let (l, u) = bounds(k as f64 / MARKET as f64);
        lo += pmf * l;
        hi += pmf * u;
        pmf *= (MARKET - k) as f64 / (k + 1) as f64 * p / q;
    }
    (lo, hi)
}

fn simpson<F: Fn(f64) -> (f64, f64)>(f: F, a: f64, b: f64, m: usize) -> (f64, f64) {
    let h = (b - a) / (2 * m) as f64;
    let (mut s0, mut s1) = (0.0, 0.0);
    for i in 0..=2 * m {
        let w = if i == 0 || i == 2 * m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let (u, v) = f(a + h * i as f64);
        s0 += w * u;
        s1 += w * v;
    }
    (s0 * h / 3.0, s1 * h / 3.0)
}

/// Conditional means of `(Y^L, Y^U)` and `P(X1 = 1)` in cell `(x2, ze)` with
/// `θ₁ = θ₂ = −1` and `ε` a standard normal clamped to `[−4, 4]`.
pub fn cell_moments(x2: f64, ze: f64) -> (f64, f64, f64) {
    let dens = |e: f64| (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let at = |e: f64, x1: f64| expected_bounds(logistic(-x1 - x2 + e));
    let cut = -2.0 * ze;
    let tail = phi(-4.0);
    let (l0, u0) = simpson(|e| { let (l, u) = at(e, 0.0); (dens(e) * l, dens(e) * u) }, -4.0, cut, 20_000);
    let (l1, u1) = simpson(|e| { let (l, u) = at(e, 1.0); (dens(e) * l, dens(e) * u) }, cut, 4.0, 20_000);
    let (lm, um) = at(-4.0, 0.0);
    let (lp, up) = at(4.0, 1.0);
    let lo = l0 + l1 + tail * (lm + lp);
    let hi = u0 + u1 + tail * (um + up);
    let p1 = 1.0 - phi(cut);
    (lo, hi, p1)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(m) / d;
    }
    Some(x)
}

/// `[min θ₂, max θ₂]` over `{(θ₁, θ₂, γ) : L_c ≤ θ₂x₂ + θ₁p₁(z) + γ ≤ U_c}`,
/// by enumerating vertices of the three-dimensional polytope.
pub fn iv_identified_set() -> (f64, f64) {
    // rows a·v ≤ r with v = (θ₁, θ₂, γ)
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    for x2 in [0.0, 1.0] {
        for ze in [0.0, 1.0] {
            let (lo, hi, p1) = cell_moments(x2, ze);
            let a = [p1, x2, 1.0];
            rows.push((a, hi));
            rows.push(([-a[0], -a[1], -a[2]], -lo));
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let m = rows.len();
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                let a = [rows[i].0, rows[j].0, rows[k].0];
                let Some(v) = solve3(a, [rows[i].1, rows[j].1, rows[k].1]) else { continue };
                let ok = rows.iter().all(|(r, rhs)| r[0] * v[0] + r[1] * v[1] + r[2] * v[2] <= rhs + 1e-10);
                if ok {
                    lo = lo.min(v[1]);
                    hi = hi.max(v[1]);
                }
            }
        }
    }
    (lo, hi)
}

/// Apply `μ ↦ Sμ` consistently: `B S⁻¹`, `Sμ̄`, `SΠ̄`, `(I ⊗ S)Ω̄(I ⊗ S)'`.
/// Returns the matching first-stage weight `(SS')⁻¹`, under which the
/// first-stage projection is the image of the original one.
pub fn reparameterize(spec: &ProblemSpec, est: &Estimates, s: &Matrix) -> (ProblemSpec, Estimates, Matrix) {
    let dm = spec.d_mu();
    let dd = spec.d_delta();
    let s_inv = s.clone().try_inverse().expect("invertible");
    let mut block = Matrix::zeros(dm * (1 + dd), dm * (1 + dd));
    for k in 0..=dd {
        block.view_mut((k * dm, k * dm), (dm, dm)).copy_from(s);
    }
    let omega = &block * &est.omega_bar * block.transpose();
    let omega = (&omega + omega.transpose()) * 0.5;
    let spec2 = ProblemSpec::new(&spec.b * &s_inv, spec.d_mat.clone(), spec.d.clone(), spec.eq_indices.clone(), spec.n).unwrap();
    let est2 = Estimates { mu_bar: s * &est.mu_bar, pi_bar: s * &est.pi_bar, omega_bar: omega };
    let upsilon = s_inv.transpose() * &s_inv;
    (spec2, est2, upsilon)
}
