mod common;

use ineqgcc::ci::{invert_test, CiOptions, ProblemFamily};
use ineqgcc::sim::{simple_dgp, simple_population, simple_spec};
use ineqgcc::{Estimates, Matrix, Variant, Vector};

fn slope(j: usize) -> Vector {
    let mut s = Vector::zeros(j);
    s[0] = -1.0;
    s[1] = -1.0;
    s
}

fn family(spec: ineqgcc::ProblemSpec, est: Estimates) -> ProblemFamily {
    let j = spec.d_c();
    ProblemFamily::affine(spec, est, slope(j), Vector::zeros(j)).unwrap()
}

#[test]
fn near_noiseless_upper_endpoint_is_zero() {
    // the population set for θ is (−∞, 0]
    let j = 4;
    let (mu, c) = simple_population(j, 0.0, 500);
    let est = Estimates { mu_bar: mu, pi_bar: Matrix::from_column_slice(j, 1, c.as_slice()), omega_bar: Matrix::identity(2 * j, 2 * j) * 1e-8 };
    let f = family(simple_spec(j, 500, 0.0).unwrap(), est);
    let opts = CiOptions { tol: Some(1e-4), ..Default::default() };
    let ci = invert_test(&f, 0.05, (-1.0, 1.0), &opts).unwrap();
    assert!(ci.upper.unwrap().abs() < 1e-3, "{ci:?}");
    assert!(ci.lower_at_bracket);
    assert_eq!(ci.lower, Some(-1.0));
}

#[test]
fn accepted_everywhere_is_flagged() {
    let j = 3;
    let (spec, est) = simple_dgp(j, 0.0, 500, -0.5, 1).unwrap();
    let f = ProblemFamily::affine(spec, est, Vector::zeros(j), Vector::zeros(j)).unwrap();
    let ci = invert_test(&f, 0.05, (-2.0, 2.0), &CiOptions::default()).unwrap();
    assert_eq!((ci.lower, ci.upper), (Some(-2.0), Some(2.0)));
    assert!(ci.lower_at_bracket && ci.upper_at_bracket && !ci.empty);
}

#[test]
fn intervals_shrink_with_sample_size() {
    let upper = |n: usize| {
        (0..20)
            .map(|seed| {
                let (spec, est) = simple_dgp(5, 0.0, n, 0.0, seed).unwrap();
                invert_test(&family(spec, est), 0.05, (-1.0, 1.0), &CiOptions::default()).unwrap().upper.unwrap()
            })
            .sum::<f64>()
            / 20.0
    };
    let (small, large) = (upper(500), upper(2000));
    assert!(large < small, "{large} vs {small}");
}

#[test]
fn refined_interval_within_plain() {
    for seed in 0..15 {
        let (spec, est) = simple_dgp(3, 0.0, 500, 0.0, seed).unwrap();
        let f = family(spec, est);
        let g = invert_test(&f, 0.05, (-1.0, 1.0), &CiOptions::default()).unwrap();
        let r = invert_test(&f, 0.05, (-1.0, 1.0), &CiOptions { variant: Variant::Rgcc, ..Default::default() }).unwrap();
        if r.empty {
            continue;
        }
        assert!(!g.empty);
        let tol = g.tol + r.tol;
        assert!(r.lower.unwrap() >= g.lower.unwrap() - tol && r.upper.unwrap() <= g.upper.unwrap() + tol, "seed {seed}: {g:?} {r:?}");
    }
}
