mod common;

use ineqgcc::qp::{brute_force_qp, min_norm_multipliers, min_norm_point, solve_restricted_qp, QpProblem};
use ineqgcc::{Error, Matrix, Vector};
use proptest::prelude::*;
use rand::Rng;

fn scalar(w: f64, x0: f64, b: &[f64], c: &[f64], d: &[f64]) -> QpProblem {
    let k = d.len();
    let cols = if k == 0 { 0 } else { c.len() / k };
    QpProblem::new(
        Matrix::from_element(1, 1, w),
        Vector::from_element(1, x0),
        Matrix::from_row_slice(k, 1, b),
        Matrix::from_row_slice(k, cols, c),
        Vector::from_row_slice(d),
    )
    .unwrap()
}

/// Feasible random instance: `d` is built from a point of the set.
fn random_problem(r: &mut rand_chacha::ChaCha8Rng, dc: usize, dm: usize, dd: usize) -> QpProblem {
    let w = common::spd(r, dm);
    let b = common::gauss_matrix(r, dc, dm);
    let c = common::gauss_matrix(r, dc, dd);
    let mu = common::gauss_vector(r, dm);
    let delta = common::gauss_vector(r, dd);
    let mut d = &b * &mu + &c * &delta;
    for j in 0..dc {
        if r.random::<f64>() > 0.3 {
            d[j] += r.random::<f64>();
        }
    }
    let x0 = &mu + common::gauss_vector(r, dm) * 2.0;
    QpProblem::new(w, x0, b, c, d).unwrap()
}

#[test]
fn degenerate_pair_from_the_example() {
    let p = scalar(1.0, 0.0, &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]);
    let s = solve_restricted_qp(&p).unwrap();
    assert!(s.objective.abs() < 1e-12);
    assert!(s.mu_hat[0].abs() < 1e-12);
    assert!(s.delta_hat[0].abs() < 1e-12);
    assert_eq!(s.active_set, vec![0, 1]);
}

#[test]
fn small_random_instance_matches_enumeration() {
    let mut r = common::rng(11);
    let p = random_problem(&mut r, 4, 2, 1);
    let a = solve_restricted_qp(&p).unwrap();
    let o = brute_force_qp(&p).unwrap();
    assert!((a.objective - o.objective).abs() < 1e-8);
    assert!(a.objective > 0.0);
}

#[test]
fn min_norm_endpoint_by_grid_scan() {
    let c = Matrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let b = Vector::from_row_slice(&[3.0, -2.0]);
    let got = min_norm_point(&c, &b).unwrap()[0];
    let scan = (-5000..=5000)
        .map(|i| i as f64 * 1e-3)
        .filter(|&x| x <= 3.0 + 1e-12 && -x <= -2.0 + 1e-12)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap();
    assert!((got - scan).abs() < 1e-3);
    assert!((got - 2.0).abs() < 1e-9);
}

#[test]
fn scalar_multiplier_by_hand() {
    // 2W(x0 − μ̂) = B'ψ with μ̂ = 0
    let p = scalar(1.0, 1.0, &[1.0], &[], &[0.0]);
    let s = solve_restricted_qp(&p).unwrap();
    let psi = min_norm_multipliers(&p, &s, &s.active_set).unwrap();
    assert!((psi[0] - 2.0).abs() < 1e-9);
    assert!((s.psi_hat[0] - 2.0).abs() < 1e-9);
}

#[test]
fn duplicated_row_splits_weight() {
    // min ‖ψ‖ over ψ₁ + ψ₂ = 2, ψ ≥ 0 is (1, 1)
    let p = scalar(1.0, 1.0, &[1.0, 1.0], &[], &[0.0, 0.0]);
    let s = solve_restricted_qp(&p).unwrap();
    let psi = min_norm_multipliers(&p, &s, &s.active_set).unwrap();
    assert!((psi[0] - 1.0).abs() < 1e-8 && (psi[1] - 1.0).abs() < 1e-8);
}

#[test]
fn enumeration_agrees_on_reference_instances() {
    let mut r = common::rng(12);
    let cases = [
        scalar(1.0, 0.0, &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]),
        scalar(1.0, 1.0, &[1.0], &[], &[0.0]),
        random_problem(&mut r, 4, 2, 1),
    ];
    for p in &cases {
        let a = solve_restricted_qp(p).unwrap();
        let o = brute_force_qp(p).unwrap();
        assert!((a.objective - o.objective).abs() < 1e-8);
    }
}

#[test]
fn opposing_bounds_are_infeasible() {
    let p = scalar(1.0, 0.0, &[1.0, -1.0], &[], &[-1.0, -1.0]);
    assert!(matches!(solve_restricted_qp(&p), Err(Error::Infeasible { .. })));
    assert!(matches!(brute_force_qp(&p), Err(Error::Infeasible { .. })));
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=8, 1usize..=4, 0usize..=2, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solution_invariants((dc, dm, dd, seed) in dims()) {
        let mut r = common::rng(seed);
        let p = random_problem(&mut r, dc, dm, dd);
        let s = solve_restricted_qp(&p).unwrap();
        prop_assert!(s.objective >= 0.0);
        prop_assert!(s.psi_hat.iter().all(|&v| v >= -1e-10));
        prop_assert!(s.kkt_residual <= 1e-8 * (1.0 + p.center.norm()));
        let slack = &p.b * &s.mu_hat + &p.c * &s.delta_hat - &p.d;
        let xn = s.mu_hat.norm() + s.delta_hat.norm();
        for &j in &s.active_set {
            let scale = 1.0 + p.d[j].abs() + (p.b.row(j).norm() + p.c.row(j).norm()) * xn;
            prop_assert!(slack[j].abs() <= p.active_tol * scale);
        }
        prop_assert!(slack.iter().all(|&v| v <= 1e-7 * (1.0 + xn)));
    }

    #[test]
    fn objective_matches_enumeration((dc, dm, dd, seed) in dims()) {
        let mut r = common::rng(seed);
        let p = random_problem(&mut r, dc, dm, dd);
        let a = solve_restricted_qp(&p).unwrap();
        let o = brute_force_qp(&p).unwrap();
        prop_assert!((a.objective - o.objective).abs() <= 1e-8, "{} vs {}", a.objective, o.objective);
        prop_assert!((&a.mu_hat - &o.mu_hat).amax() <= 1e-6 * (1.0 + o.mu_hat.amax()));
    }

    #[test]
    fn projection_ignores_row_and_column_order((dc, dm, dd, seed) in dims()) {
        let mut r = common::rng(seed);
        let p = random_problem(&mut r, dc, dm, dd);
        let a = solve_restricted_qp(&p).unwrap();
        let rows: Vec<usize> = (0..dc).rev().collect();
        let cols: Vec<usize> = (0..dd).rev().collect();
        let q = QpProblem::new(
            p.weight.clone(),
            p.center.clone(),
            Matrix::from_fn(dc, dm, |i, j| p.b[(rows[i], j)]),
            Matrix::from_fn(dc, dd, |i, j| p.c[(rows[i], cols[j])]),
            Vector::from_fn(dc, |i, _| p.d[rows[i]]),
        ).unwrap();
        let b = solve_restricted_qp(&q).unwrap();
        prop_assert!((&a.mu_hat - &b.mu_hat).amax() <= 1e-7 * (1.0 + a.mu_hat.amax()));
        prop_assert!((a.objective - b.objective).abs() <= 1e-8 * (1.0 + a.objective));
    }

    #[test]
    fn feasible_center_is_fixed((dc, dm, dd, seed) in dims()) {
        let mut r = common::rng(seed);
        let mut p = random_problem(&mut r, dc, dm, dd);
        let mu = common::gauss_vector(&mut r, dm);
        let delta = common::gauss_vector(&mut r, dd);
        p.d = &p.b * &mu + &p.c * &delta + Vector::from_element(dc, 0.1);
        p.center = mu.clone();
        let s = solve_restricted_qp(&p).unwrap();
        prop_assert!(s.objective <= 1e-12);
        prop_assert!((&s.mu_hat - &mu).amax() <= 1e-8);
    }
}
