mod common;

use ineqgcc::sim::{
    interval_iv_dgp, rep_rng, run_power_curve, run_rejection_table, run_replication, simple_dgp, simple_population, Scenario,
    SimConfig,
};
use ineqgcc::{gcc_test, Variant, Vector};
use proptest::prelude::*;

const ALPHA: f64 = 0.05;

fn gcc_only(reps: usize, seed: u64) -> SimConfig {
    SimConfig::new(reps, ALPHA, vec![Variant::Gcc], seed)
}

#[test]
fn one_sided_model_dimensions() {
    let (spec, est) = simple_dgp(10, 0.0, 100, 0.0, 1).unwrap();
    assert_eq!((spec.d_c(), spec.d_mu(), spec.d_delta()), (10, 10, 1));
    est.check_against(&spec).unwrap();
}

#[test]
fn sample_means_center_on_population() {
    let (j, n, seeds) = (4, 50, 2000);
    let (mu, _) = simple_population(j, 0.0, n);
    let mut sum = Vector::zeros(j);
    for s in 0..seeds {
        sum += simple_dgp(j, 0.0, n, 0.0, s).unwrap().1.mu_bar;
    }
    let se = 1.0 / ((n * seeds as usize) as f64).sqrt();
    assert!((sum / seeds as f64 - mu).amax() < 3.0 * se);
}

#[test]
fn interval_design_dimensions_and_bounds() {
    for (dw, rows) in [(1, 8), (2, 16), (3, 32)] {
        let s = interval_iv_dgp(dw, 200, 2).unwrap();
        assert_eq!(s.problem(-1.0).unwrap().0.d_c(), rows);
        assert!(s.y_lower.iter().zip(&s.y_upper).all(|(l, u)| u - l > 0.0));
    }
}

#[test]
fn population_identified_set() {
    let (lo, hi) = common::iv_identified_set();
    assert!((lo + 1.0986).abs() < 2e-3 && (hi + 0.8613).abs() < 2e-3, "[{lo}, {hi}]");
    assert!(lo < -1.0 && hi > -1.0);
}

#[test]
fn simulated_cells_match_population_moments() {
    let s = interval_iv_dgp(1, 200_000, 6).unwrap();
    for x2 in [0usize, 1] {
        for ze in [0usize, 1] {
            let (lo, hi, p1) = common::cell_moments(x2 as f64, ze as f64);
            let idx: Vec<usize> = (0..s.cell.len()).filter(|&i| s.cell[i] == x2 + 2 * ze).collect();
            let m = idx.len() as f64;
            let mean = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / m;
            let sd = |v: &[f64], mu: f64| (idx.iter().map(|&i| (v[i] - mu).powi(2)).sum::<f64>() / m).sqrt();
            let (ml, mh, mp) = (mean(&s.y_lower), mean(&s.y_upper), mean(&s.x1));
            assert!((ml - lo).abs() < 4.0 * sd(&s.y_lower, ml) / m.sqrt(), "cell {x2}{ze}: {ml} vs {lo}");
            assert!((mh - hi).abs() < 4.0 * sd(&s.y_upper, mh) / m.sqrt(), "cell {x2}{ze}: {mh} vs {hi}");
            assert!((mp - p1).abs() < 4.0 * (p1 * (1.0 - p1) / m).sqrt());
        }
    }
}

#[test]
fn single_replication_is_one_test() {
    let sc = Scenario::Simple { j: 5, q: 4.0, n: 300 };
    let cfg = gcc_only(1, 17);
    let out = run_replication(&sc, 0.03, 0, &cfg);
    let (spec, est) = sc.draw(0.03, &mut rep_rng(17, 0)).unwrap();
    assert_eq!(out.gcc.unwrap(), gcc_test(&spec, &est, ALPHA, &cfg.options).unwrap());
}

#[test]
fn null_rejection_rates() {
    for (j, want) in [(3, 0.035), (50, 0.045)] {
        let t = run_rejection_table(&Scenario::Simple { j, q: 0.0, n: 500 }, 0.0, &gcc_only(1000, 5)).unwrap();
        let got = t.rows[0].reject_rate;
        assert!((got - want).abs() <= 0.02, "J = {j}: {got}");
        assert!(t.tallies.clean() && t.tallies.failures == 0);
    }
}

#[test]
fn power_increases_away_from_null() {
    let n = 500;
    let grid = [0.0, 6.0 / (n as f64).sqrt()];
    let t = run_power_curve(&Scenario::Simple { j: 3, q: 4.0, n }, &grid, &gcc_only(1000, 6)).unwrap();
    assert!(t.rows[1].reject_rate > t.rows[0].reject_rate);
    assert!(t.rows.iter().all(|r| (0.0..=1.0).contains(&r.reject_rate)));
}

#[test]
fn thread_count_does_not_change_results() {
    let sc = Scenario::IntervalIv { d_w: 2, n: 300 };
    let mut a = SimConfig::new(60, ALPHA, vec![Variant::Gcc, Variant::Rgcc], 8);
    a.threads = Some(1);
    let mut b = a.clone();
    b.threads = Some(3);
    let strip = |t: ineqgcc::sim::SimTable| {
        let rows: Vec<_> = t.rows.into_iter().map(|r| (r.variant, r.reject_rate.to_bits(), r.failures)).collect();
        (rows, t.tallies)
    };
    assert_eq!(strip(run_rejection_table(&sc, -1.2, &a).unwrap()), strip(run_rejection_table(&sc, -1.2, &b).unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenario_json_round_trip(j in 3usize..60, q in 0.0f64..8.0, n in 2usize..5000, dw in 1usize..=3) {
        for s in [Scenario::Simple { j, q, n }, Scenario::IntervalIv { d_w: dw, n }] {
            let text = serde_json::to_string(&s).unwrap();
            prop_assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), s);
        }
    }

    #[test]
    fn replications_are_reproducible(seed in any::<u64>(), rep in 0usize..1000) {
        let sc = Scenario::Simple { j: 4, q: 0.0, n: 100 };
        let cfg = SimConfig::new(1, ALPHA, vec![Variant::Gcc, Variant::Rgcc], seed);
        let a = run_replication(&sc, 0.0, rep, &cfg);
        let b = run_replication(&sc, 0.0, rep, &cfg);
        prop_assert_eq!(a.gcc, b.gcc);
        prop_assert_eq!(a.rgcc, b.rgcc);
    }
}
