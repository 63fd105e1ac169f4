mod common;

use common::{lambert_by_bisection, random_instance, survival_oracle};
use rgw::classify::pi_from_a;
use rgw::measures::OffspringLaw;
use rgw::simulate::{rgw_campaign, RngStream};
use rgw::survival::{j_functional, lambert_w0, proportional_baseline, solve_survival_minimizer};

#[test]
fn lambert_residuals_over_log_grid() {
    let inv_e = (-1f64).exp();
    let mut worst: f64 = 0.0;
    // negative branch segment, then log-spaced positive arguments
    for i in 0..5_000 {
        let t = i as f64 / 4_999.0;
        let x = -inv_e + 1e-12 * (inv_e / 1e-12).powf(t);
        let w = lambert_w0(x).unwrap();
        worst = worst.max((w * w.exp() - x).abs() / x.abs().max(1.0));
    }
    for i in 0..5_000 {
        let x = 10f64.powf(-12.0 + 18.0 * i as f64 / 4_999.0);
        let w = lambert_w0(x).unwrap();
        worst = worst.max((w * w.exp() - x).abs() / x.abs().max(1.0));
    }
    assert!(worst < 1e-14, "worst scaled residual {worst:e}");
    for x in [-0.36, -0.2, 0.3, 1.0, 7.0, 1e4] {
        assert!((lambert_w0(x).unwrap() - lambert_by_bisection(x)).abs() < 1e-12);
    }
}

#[test]
fn j_matches_entropy_form() {
    let nu = OffspringLaw::new(vec![0, 1, 3], vec![0.2, 0.5, 0.3]).unwrap();
    let q = 0.45;
    let r = solve_survival_minimizer(&nu, q).unwrap();
    let (_, criterion) = pi_from_a(&r.a_opt, &nu, q).unwrap();
    assert!((criterion - r.j_min).abs() < 1e-12);
}

#[test]
fn minimizer_agrees_with_projected_gradient() {
    for case in 0..10u64 {
        let (nu, q) = random_instance(RngStream::new(2024, case), 4, 6);
        let r = solve_survival_minimizer(&nu, q).unwrap();
        assert!(
            r.constraint_residual.abs() < 1e-10,
            "case {case}: residual {:e}",
            r.constraint_residual
        );
        assert!(
            r.stationarity_deviation < 1e-6,
            "case {case}: stationarity {:e}",
            r.stationarity_deviation
        );
        assert!(r.j_min <= r.j_baseline + 1e-9);
        for (&k, &a) in nu.support().iter().zip(&r.a_opt) {
            assert!(a >= 0.0 && q * a < 1.0);
            if k > 0 && nu.weight_of(k) > 0.0 {
                assert!((a + lambert_w0(-r.c * k as f64).unwrap() / q).abs() < 1e-9 * (1.0 + a));
            }
        }
        let (oracle, _) = survival_oracle(&nu, q, &vec![1.0; nu.len()]);
        assert!(
            (r.j_min - oracle).abs() < 1e-6,
            "case {case}: {} vs {}",
            r.j_min,
            oracle
        );
    }
}

#[test]
fn oracle_reaches_one_minimum_from_many_starts() {
    let nu = OffspringLaw::new(vec![0, 1, 2, 5], vec![0.3, 0.2, 0.3, 0.2]).unwrap();
    let q = 0.55;
    let target = solve_survival_minimizer(&nu, q).unwrap().j_min;
    let mut r = RngStream::new(11, 0).rng();
    for _ in 0..16 {
        let start: Vec<f64> = (0..nu.len()).map(|_| r.uniform()).collect();
        let (v, _) = survival_oracle(&nu, q, &start);
        assert!((v - target).abs() < 1e-6);
    }
}

#[test]
fn baseline_root_and_ordering() {
    let nu = OffspringLaw::uniform(vec![1, 2]).unwrap();
    let q = 1.0 / 3.0;
    let (c, jb) = proportional_baseline(&nu, q).unwrap();
    let b: Vec<f64> = nu.support().iter().map(|&k| c * k as f64).collect();
    let residual: f64 = nu
        .weights()
        .iter()
        .zip(&b)
        .map(|(w, x)| w / (1.0 - q * x))
        .sum::<f64>()
        - 1.0 / (1.0 - q);
    assert!(residual.abs() < 1e-12);
    assert!((jb - j_functional(&b, &nu, q).unwrap().get()).abs() < 1e-15);
    assert!(solve_survival_minimizer(&nu, q).unwrap().j_min <= jb + 1e-9);
}

#[test]
fn certification_is_corroborated_by_simulation() {
    let nu = OffspringLaw::new(vec![0, 2], vec![0.5, 0.5]).unwrap();
    let q = 0.6;
    let r = solve_survival_minimizer(&nu, q).unwrap();
    let summary = rgw_campaign(&nu, q, 60, 100_000, 200, RngStream::new(42, 0)).unwrap();
    if r.survives_certified {
        assert!(summary.survival.mean > 0.0);
    }
}
