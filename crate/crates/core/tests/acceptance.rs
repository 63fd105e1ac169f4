//! Acceptance suite: one line per criterion with the observed value, the
//! tolerance and the runtime. Runs without the libtest harness so the lines
//! always reach the output; exits non-zero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use common::{
    closed_constant_control, closed_lambda, closed_star, lambert_by_bisection, random_instance,
    survival_oracle,
};
use rgw::classify::{self, VerdictKind};
use rgw::control;
use rgw::measures::{self, LogWeights, OffspringLaw, ProbVector};
use rgw::rate::{self, QuadratureSpec};
use rgw::simulate::{self, RngStream};
use rgw::survival;

const SEED: u64 = 20_240_601;

struct Outcome {
    observed: f64,
    tolerance: f64,
    budget_secs: f64,
    note: String,
}

fn flagship() -> OffspringLaw {
    OffspringLaw::uniform(vec![1, 2]).unwrap()
}

fn two(p: f64) -> ProbVector {
    ProbVector::new(vec![1, 2], vec![p, 1.0 - p]).unwrap()
}

fn criterion_1() -> Outcome {
    let nu = flagship();
    let spec = QuadratureSpec::default();
    let mut worst: f64 = 0.0;
    for i in 0..21 {
        for j in 0..21 {
            let (x, y) = (-2.0 + 0.2 * i as f64, -2.0 + 0.2 * j as f64);
            let v = rate::lambda_q(&LogWeights::new(vec![x, y]).unwrap(), &nu, 1.0 / 3.0, &spec)
                .unwrap();
            worst = worst.max((v - closed_lambda(x, y)).abs());
        }
    }
    Outcome {
        observed: worst,
        tolerance: 1e-8,
        budget_secs: 5.0,
        note: "max |Λ − closed form| on 21×21 grid".into(),
    }
}

fn criterion_2() -> Outcome {
    let nu = flagship();
    let mut worst: f64 = 0.0;
    for i in 1..=10 {
        let p = 0.05 * i as f64;
        let d = rate::lambda_q_star(&two(p), &nu, 1.0 / 3.0).unwrap();
        worst = worst.max((d.value - closed_star(p)).abs());
    }
    Outcome {
        observed: worst,
        tolerance: 1e-6,
        budget_secs: 5.0,
        note: "max |Λ* − closed form|, p = 0.05..0.5".into(),
    }
}

fn criterion_3() -> Outcome {
    let nu = flagship();
    let a = rate::nu_bar_q(&nu, 1.0 / 3.0).unwrap();
    let b = rate::nu_bar_q(&nu, 0.0).unwrap();
    let err = (a.weights()[0] - 0.2)
        .abs()
        .max((a.weights()[1] - 0.8).abs())
        .max((b.weights()[0] - 1.0 / 3.0).abs())
        .max((b.weights()[1] - 2.0 / 3.0).abs());
    Outcome {
        observed: err,
        tolerance: 1e-7,
        budget_secs: f64::INFINITY,
        note: format!(
            "ν̄ = ({:.9}, {:.9}) at q = 1/3",
            a.weights()[0],
            a.weights()[1]
        ),
    }
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut label = 0;
    while done < 20 {
        let (nu, q) = random_instance(RngStream::new(SEED, 4).split(label), 4, 6);
        label += 1;
        // ln is finite only on positive atoms
        if nu.support()[0] == 0 {
            continue;
        }
        let bar = rate::nu_bar_q(&nu, q).unwrap();
        let ln = LogWeights::ln(nu.support());
        let lhs = measures::pair(&bar, &ln).unwrap().get()
            - rate::lambda_q_star(&bar, &nu, q).unwrap().value;
        let rhs = rate::lambda_q(&ln, &nu, q, &QuadratureSpec::default()).unwrap();
        worst = worst.max((lhs - rhs).abs());
        done += 1;
    }
    Outcome {
        observed: worst,
        tolerance: 1e-6,
        budget_secs: f64::INFINITY,
        note: "20 random laws, |S| ≤ 4".into(),
    }
}

fn criterion_5() -> Outcome {
    let nu = flagship();
    let sol = control::rate_by_control(&two(0.2), &nu, 1.0 / 3.0, 64, 8, SEED).unwrap();
    let rel = (sol.value - 0.0845144).abs() / 0.0845144;
    let margin = 0.0915163 - sol.value;
    let bound_ok = (sol.constant_value - 0.0915163).abs() < 1e-7
        && (closed_constant_control(0.2) - 0.0915163).abs() < 1e-7;
    // folded into one number: relative gap, or infinity when strictness fails
    let observed = if margin > 1e-3 && bound_ok {
        rel
    } else {
        f64::INFINITY
    };
    Outcome {
        observed,
        tolerance: 0.02,
        budget_secs: 120.0,
        note: format!("control {:.7}, margin below H {:.3e}", sol.value, margin),
    }
}

/// `E_q Z_n` by dynamic programming over lineage count vectors.
fn expected_total(nu: &OffspringLaw, q: f64, n: u32) -> f64 {
    let support = nu.support();
    let mut layer: HashMap<Vec<u64>, f64> = HashMap::from([(vec![0; support.len()], 1.0)]);
    for i in 0..n {
        let mut next = HashMap::new();
        for (counts, w) in layer {
            for (j, &k) in support.iter().enumerate() {
                let p = if i == 0 {
                    nu.weights()[j]
                } else {
                    q * counts[j] as f64 / i as f64 + (1.0 - q) * nu.weights()[j]
                };
                if p == 0.0 || k == 0 {
                    continue;
                }
                let mut c = counts.clone();
                c[j] += 1;
                *next.entry(c).or_insert(0.0) += w * p * k as f64;
            }
        }
        layer = next;
    }
    layer.values().sum()
}

fn criterion_6() -> Outcome {
    let nu = flagship();
    let replicas = 100_000;
    let mut worst_z: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    for (qi, q) in [0.0, 1.0 / 3.0].into_iter().enumerate() {
        for n in 1..=6u32 {
            let exact: f64 = simulate::enumerate_expected_counts(&nu, q, n)
                .unwrap()
                .values()
                .sum();
            let dp = expected_total(&nu, q, n);
            worst_exact = worst_exact.max((exact - dp).abs() / dp);
            if q == 0.0 {
                worst_exact = worst_exact.max((exact - 1.5f64.powi(n as i32)).abs());
            }
            let stream = RngStream::new(SEED, 6).substream(&[qi as u64, n as u64]);
            let tree = simulate::rgw_campaign(&nu, q, n, replicas, u64::MAX, stream.split(0))
                .unwrap()
                .population;
            let mto =
                simulate::many_to_one_estimate(&nu, q, n, replicas, |_| true, stream.split(1))
                    .unwrap();
            worst_z = worst_z
                .max((tree.mean - exact).abs() / tree.std_error)
                .max((mto.mean - exact).abs() / mto.std_error)
                .max((tree.mean - mto.mean).abs() / tree.std_error.hypot(mto.std_error));
        }
    }
    let observed = if worst_exact < 1e-12 {
        worst_z
    } else {
        f64::INFINITY
    };
    Outcome {
        observed,
        tolerance: 3.0,
        budget_secs: 120.0,
        note: format!("max z-score; enumeration vs independent DP {worst_exact:.1e}"),
    }
}

fn criterion_7() -> Outcome {
    let est = simulate::many_to_one_estimate(
        &flagship(),
        1.0 / 3.0,
        16,
        1_000_000,
        |_| true,
        RngStream::new(SEED, 7),
    )
    .unwrap();
    let rate = est.mean.ln() / 16.0;
    Outcome {
        observed: (rate - 1.6f64.ln()).abs(),
        tolerance: 0.02,
        budget_secs: 60.0,
        note: format!("(1/16) log E Z_16 = {rate:.5}"),
    }
}

fn criterion_8() -> Outcome {
    let nu = flagship();
    let q = 1.0 / 3.0;
    let (mut freq_err, mut eig_err, mut vec_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (i, p) in [0.2, 0.5, 0.1, 0.7, 0.35].into_iter().enumerate() {
        let a = classify::a_from_rho(&two(p), &nu, q).unwrap();
        // π_a in closed form: proportional to ν_k / (1 − q a_k) · a_k
        let raw: Vec<f64> = a
            .iter()
            .zip(nu.weights())
            .map(|(ak, w)| w * ak / (1.0 - q * ak))
            .collect();
        let total: f64 = raw.iter().sum();
        let pi: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let (freq, _) = simulate::simulate_spine_urn(
            &nu,
            q,
            &a,
            1_000_000,
            RngStream::new(SEED, 8).split(i as u64),
        )
        .unwrap();
        let rep = simulate::replacement_matrix(&nu, q, &a).unwrap();
        for (k, target) in pi.iter().enumerate() {
            freq_err = freq_err.max((freq.weights()[k] - target).abs());
            vec_err = vec_err.max((rep.eigenvector_on_support.weights()[k] - target).abs());
        }
        eig_err = eig_err.max((rep.eigenvalue - 1.0).abs());
    }
    let observed = if eig_err < 1e-10 && vec_err < 1e-8 {
        freq_err
    } else {
        f64::INFINITY
    };
    Outcome {
        observed,
        tolerance: 0.01,
        budget_secs: 60.0,
        note: format!("eigenvalue err {eig_err:.1e}, eigenvector err {vec_err:.1e}"),
    }
}

fn criterion_9() -> Outcome {
    let inv_e = (-1f64).exp();
    let mut residual: f64 = 0.0;
    let mut bisection_gap: f64 = 0.0;
    for i in 0..10_000 {
        let t = i as f64 / 9_999.0;
        let x = -inv_e + 1e-12 * ((1e6 + inv_e) / 1e-12).powf(t);
        let w = survival::lambert_w0(x).unwrap();
        residual = residual.max((w * w.exp() - x).abs() / x.abs().max(1.0));
        if i % 100 == 0 {
            bisection_gap = bisection_gap.max((w - lambert_by_bisection(x)).abs());
        }
    }
    let (mut cons, mut stat, mut excess, mut oracle): (f64, f64, f64, f64) =
        (0.0, 0.0, f64::NEG_INFINITY, 0.0);
    for i in 0..10 {
        let (nu, q) = random_instance(RngStream::new(SEED, 9).split(i), 5, 8);
        let r = survival::solve_survival_minimizer(&nu, q).unwrap();
        let positive = nu.support().iter().filter(|&&k| k > 0).count();
        let start = vec![1.0; positive];
        let (j_oracle, _) = survival_oracle(&nu, q, &start);
        cons = cons.max(r.constraint_residual.abs());
        stat = stat.max(r.stationarity_deviation);
        excess = excess.max(r.j_min - r.j_baseline);
        oracle = oracle.max((r.j_min - j_oracle).abs());
    }
    let ok = cons < 1e-10 && stat < 1e-6 && excess <= 0.0 && oracle < 1e-6 && bisection_gap < 1e-6;
    Outcome {
        observed: if ok { residual } else { f64::INFINITY },
        tolerance: 1e-14,
        budget_secs: 30.0,
        note: format!(
            "constraint {cons:.1e}, stationarity {stat:.1e}, J−J_b ≤ {excess:.1e}, oracle gap {oracle:.1e}"
        ),
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == flo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_10() -> Outcome {
    let nu = flagship();
    let mesh = 200usize;
    let mut kinds = Vec::with_capacity(mesh + 1);
    let mut both = false;
    for i in 0..=mesh {
        let v = classify::classify_rgw(&two(i as f64 / mesh as f64), &nu, 1.0 / 3.0).unwrap();
        both |= v.margin_evanescence > 0.0 && v.margin_persistence > 0.0;
        kinds.push(v.kind);
    }
    // thresholds against ⟨ρ_p, ln⟩ = (1 − p) log 2
    let ln2 = 2f64.ln();
    let persist = bisect(|p| closed_constant_control(p) - (1.0 - p) * ln2, 0.0, 0.99);
    let evanesce = bisect(|p| closed_star(p) - (1.0 - p) * ln2, 0.0, 0.99);
    let last_persistent = kinds
        .iter()
        .rposition(|k| *k == VerdictKind::StronglyPersistentPositiveProb)
        .unwrap_or(0);
    let first_evanescent = kinds
        .iter()
        .position(|k| *k == VerdictKind::Evanescent)
        .unwrap_or(mesh);
    let step = 1.0 / mesh as f64;
    let lp = last_persistent as f64 * step;
    let fe = first_evanescent as f64 * step;
    let pattern = !both
        && kinds[mesh] == VerdictKind::Evanescent
        && kinds[40] == VerdictKind::StronglyPersistentPositiveProb
        && lp <= persist
        && persist <= evanesce
        && evanesce <= fe;
    let err = (persist - lp).max(fe - evanesce);
    Outcome {
        observed: if pattern { err } else { f64::INFINITY },
        tolerance: step,
        budget_secs: f64::INFINITY,
        note: format!("persistent up to {lp:.3}, crossing {persist:.5}; evanescent from {fe:.3}, crossing {evanesce:.5}"),
    }
}

fn main() -> ExitCode {
    let criteria: [(u8, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failures = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let secs = t.elapsed().as_secs_f64();
        let pass = o.observed < o.tolerance && secs < o.budget_secs;
        failures += !pass as usize;
        println!(
            "criterion {id:>2}: {} observed {:.3e} tolerance {:.1e} runtime {secs:.2}s ({})",
            if pass { "PASS" } else { "FAIL" },
            o.observed,
            o.tolerance,
            o.note
        );
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
