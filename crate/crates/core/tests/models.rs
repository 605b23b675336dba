mod common;

use ineqgcc::io::ProblemFile;
use ineqgcc::linalg::{rank, RankTolerance};
use ineqgcc::models::{
    bootstrap_omega, build_lp_bounds, build_spec_test, build_subvector, estimates_from_observations, reparameterize_null, LpModel,
    MomentData, Target,
};
use ineqgcc::sim::simple_spec;
use ineqgcc::{Matrix, Vector};
use proptest::prelude::*;

#[test]
fn equality_pair_block() {
    let m = build_spec_test(1, 0).unwrap();
    assert_eq!(m.b, Matrix::from_row_slice(2, 1, &[-1.0, 1.0]));
    assert_eq!(m.d, Vector::zeros(2));
    assert_eq!(m.eq_indices, vec![0, 1]);
}

#[test]
fn inequalities_only() {
    let m = build_spec_test(0, 3).unwrap();
    assert_eq!(m.b, -Matrix::identity(3, 3));
}

#[test]
fn mixed_rows_and_rank() {
    let m = build_spec_test(2, 2).unwrap();
    assert_eq!(m.b.nrows(), 6);
    assert_eq!(rank(&m.b, RankTolerance::default()).unwrap(), 4);
    let s = build_subvector(2, 2, 3).unwrap().spec(100).unwrap();
    assert_eq!(s.d_delta(), 3);
    assert_eq!(s.d_c(), 6);
}

#[test]
fn simple_model_as_family_member() {
    let s = simple_spec(6, 500, 0.7).unwrap();
    assert_eq!(s.b, Matrix::identity(6, 6));
    assert_eq!(s.d_mat, Matrix::zeros(6, 1));
    let mut d = Vector::zeros(6);
    d[0] = -0.7;
    d[1] = -0.7;
    assert_eq!(s.d, d);
}

fn lp(gamma: Target, d_g: usize, d_a: usize, d_delta: usize) -> LpModel {
    LpModel {
        gamma,
        gamma_mat: Matrix::from_fn(d_g, d_delta, |i, j| ((i + 2 * j) % 3) as f64 * 0.25),
        m: Vector::from_fn(d_g, |i, _| 0.1 * i as f64),
        a: Matrix::from_fn(d_a, d_delta, |i, j| if (i + j) % 2 == 0 { -1.0 } else { 0.5 }),
        b: Vector::from_element(d_a, 1.0),
        theta: 0.4,
    }
}

#[test]
fn known_target_block_pattern() {
    let t = build_lp_bounds(&lp(Target::Known(Vector::from_element(2, 1.0)), 1, 0, 2), 100).unwrap();
    assert_eq!(t.spec.b, Matrix::from_row_slice(4, 1, &[0.0, 0.0, 1.0, -1.0]));
    assert_eq!(t.spec.d_mat.row(0).transpose(), Vector::from_element(2, 1.0));
}

#[test]
fn estimated_target_first_column() {
    let t = build_lp_bounds(&lp(Target::Estimated(Vector::from_element(3, 1.0)), 2, 1, 3), 100).unwrap();
    let mut col = Vector::zeros(t.spec.d_c());
    col[0] = 1.0;
    col[1] = -1.0;
    assert_eq!(t.spec.b.column(0).into_owned(), col);
}

#[test]
fn transition_model_row_count() {
    // five equalities give ten rows, next to the two target rows and 19 inequalities
    let t = build_lp_bounds(&lp(Target::Known(Vector::from_element(9, 1.0)), 5, 19, 9), 100).unwrap();
    assert_eq!(t.spec.d_c(), 2 + 10 + 19);
}

#[test]
fn complement_of_first_axis() {
    let c = reparameterize_null(&Matrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
    assert!((c[(0, 0)]).abs() < 1e-14 && (c[(0, 1)].abs() - 1.0).abs() < 1e-14);
}

#[test]
fn column_means() {
    let mut r = common::rng(51);
    let g = common::gauss_matrix(&mut r, 30, 3);
    let jac: Vec<Matrix> = (0..30).map(|_| common::gauss_matrix(&mut r, 3, 2)).collect();
    let data = MomentData { g_obs: g.clone(), jac_obs: jac.clone(), cluster_ids: None };
    let e = estimates_from_observations(&data).unwrap();
    for k in 0..3 {
        assert!((e.mu_bar[k] - g.column(k).mean()).abs() < 1e-14);
        for c in 0..2 {
            let avg = jac.iter().map(|m| m[(k, c)]).sum::<f64>() / 30.0;
            assert!((e.pi_bar[(k, c)] - avg).abs() < 1e-14);
        }
    }
}

#[test]
fn constant_data_has_zero_covariance() {
    let data = MomentData { g_obs: Matrix::from_element(5, 2, 0.7), jac_obs: vec![], cluster_ids: None };
    assert_eq!(estimates_from_observations(&data).unwrap().omega_bar, Matrix::zeros(2, 2));
}

#[test]
fn bootstrap_covariance_of_standard_normal_mean() {
    let mut r = common::rng(52);
    let data = MomentData { g_obs: common::gauss_matrix(&mut r, 2000, 3), jac_obs: vec![], cluster_ids: None };
    let om = bootstrap_omega(&data, 1000, 9).unwrap();
    assert!((om - Matrix::identity(3, 3)).amax() < 0.15);
}

#[test]
fn bootstrap_singleton_clusters_and_seed() {
    let mut r = common::rng(53);
    let g = common::gauss_matrix(&mut r, 50, 2);
    let plain = MomentData { g_obs: g.clone(), jac_obs: vec![], cluster_ids: None };
    let singletons = MomentData { g_obs: g, jac_obs: vec![], cluster_ids: Some((0..50).collect()) };
    let a = bootstrap_omega(&plain, 200, 4).unwrap();
    assert_eq!(a, bootstrap_omega(&singletons, 200, 4).unwrap());
    assert_eq!(a, bootstrap_omega(&plain, 200, 4).unwrap());
}

proptest! {
    #[test]
    fn complement_completes_a_basis(dt in 1usize..4, extra in 0usize..4, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let lam = common::gauss_matrix(&mut r, dt, dt + extra);
        let c = reparameterize_null(&lam).unwrap();
        prop_assert_eq!(c.nrows(), extra);
        prop_assert!((&c * c.transpose() - Matrix::identity(extra, extra)).amax() < 1e-10);
        prop_assert!((&lam * c.transpose()).amax() < 1e-10);
        let mut full = Matrix::zeros(dt + extra, dt + extra);
        full.view_mut((0, 0), (dt, dt + extra)).copy_from(&lam);
        full.view_mut((dt, 0), (extra, dt + extra)).copy_from(&c);
        prop_assert!(full.determinant().abs() > 1e-8);
    }

    #[test]
    fn builders_round_trip_through_json(d_eq in 0usize..3, d_ineq in 1usize..4, dd in 0usize..3, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let s = build_subvector(d_eq, d_ineq, dd).unwrap().spec(300).unwrap();
        let dm = s.d_mu();
        let est = ineqgcc::Estimates {
            mu_bar: common::gauss_vector(&mut r, dm),
            pi_bar: common::gauss_matrix(&mut r, dm, dd),
            omega_bar: common::spd(&mut r, dm * (1 + dd)),
        };
        let text = ProblemFile::from_problem(&s, &est).to_json();
        let (s2, e2) = ProblemFile::from_json(&text).unwrap().to_problem().unwrap();
        prop_assert_eq!(s2, s);
        prop_assert_eq!(e2, est);
    }
}
