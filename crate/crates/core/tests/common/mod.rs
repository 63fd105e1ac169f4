//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rgw::measures::OffspringLaw;
use rgw::simulate::RngStream;

/// `Λ_{1/3}` for the uniform law on {1, 2}.
pub fn closed_lambda(x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    2f64.ln() + hi - (3.0 - (lo - hi).exp()).ln()
}

/// `Λ_{1/3}^*(p, 1 − p)` for the uniform law on {1, 2}.
pub fn closed_star(p: f64) -> f64 {
    let p = p.min(1.0 - p);
    let lead = if p == 0.0 {
        0.0
    } else {
        p * (3.0 * p / (p + 1.0)).ln()
    };
    lead - 2f64.ln() + (3.0 / (p + 1.0)).ln()
}

/// `H(ρ | ρ/3 + 2ν/3)` for `ρ = (p, 1 − p)` and the uniform law on {1, 2}.
pub fn closed_constant_control(p: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, (p + 1.0) / 3.0) + term(1.0 - p, (2.0 - p) / 3.0)
}

/// Root of `y e^y = x` on `[-1, ∞)` by plain bisection.
pub fn lambert_by_bisection(x: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0f64, 2.0 + x.max(0.0).ln_1p());
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid * mid.exp() < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A law on a random subset of `0..=max_atom` with at least one positive
/// atom, and a memory parameter in `[0.05, 0.95]`.
pub fn random_instance(stream: RngStream, max_size: usize, max_atom: u32) -> (OffspringLaw, f64) {
    let mut r = stream.rng();
    loop {
        let mut support: Vec<u32> = (0..=max_atom).collect();
        // Fisher-Yates on the prefix
        let len = support.len();
        for i in 0..len {
            let j = i + (r.uniform() * (len - i) as f64) as usize;
            support.swap(i, j.min(len - 1));
        }
        let size = 1 + (r.uniform() * max_size as f64) as usize;
        let mut support: Vec<u32> = support.into_iter().take(size.min(max_size)).collect();
        support.sort_unstable();
        if support.iter().all(|&k| k == 0) {
            continue;
        }
        let raw: Vec<f64> = support.iter().map(|_| 0.05 + r.uniform()).collect();
        let total: f64 = raw.iter().sum();
        let nu = OffspringLaw::new(support, raw.iter().map(|w| w / total).collect()).unwrap();
        let q = 0.05 + 0.9 * r.uniform();
        return (nu, q);
    }
}

/// Euclidean projection onto `{y ≥ 0, Σ y = total}`.
pub fn project_scaled_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - total) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Minimum of the survival functional by projected gradient.
///
/// With `y_k = ν_k / (1 − q a_k) − ν_k` on the atoms `k > 0`, the admissible
/// set becomes the scaled simplex `Σ y = q/(1 − q)` and the functional reads
/// `(1−q)/q Σ y_k log(y_k / (q k (ν_k + y_k)))`, which is convex. Returns the
/// minimum and the corresponding activity vector over the full support.
pub fn survival_oracle(nu: &OffspringLaw, q: f64, start: &[f64]) -> (f64, Vec<f64>) {
    let atoms: Vec<(usize, f64, f64)> = nu
        .support()
        .iter()
        .zip(nu.weights())
        .enumerate()
        .filter(|(_, (&k, &w))| k > 0 && w > 0.0)
        .map(|(i, (&k, &w))| (i, k as f64, w))
        .collect();
    let total = q / (1.0 - q);
    let scale = (1.0 - q) / q;
    let value = |y: &[f64]| -> f64 {
        y.iter()
            .zip(&atoms)
            .filter(|(&v, _)| v > 0.0)
            .map(|(&v, &(_, k, w))| v * (v / (q * k * (w + v))).ln())
            .sum::<f64>()
            * scale
    };
    let grad = |y: &[f64]| -> Vec<f64> {
        y.iter()
            .zip(&atoms)
            .map(|(&v, &(_, k, w))| {
                let v = v.max(1e-300);
                scale * ((v / (q * k * (w + v))).ln() + w / (w + v))
            })
            .collect()
    };
    let mut y = project_scaled_simplex(start, total);
    let mut f = value(&y);
    let mut step = 1.0;
    for _ in 0..100_000 {
        let g = grad(&y);
        let mut moved = false;
        step *= 2.0;
        for _ in 0..80 {
            let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let trial = project_scaled_simplex(&trial, total);
            let ft = value(&trial);
            let decrease: f64 = y
                .iter()
                .zip(&trial)
                .zip(&g)
                .map(|((a, b), gi)| gi * (a - b))
                .sum();
            let dist2: f64 = y.iter().zip(&trial).map(|(a, b)| (a - b) * (a - b)).sum();
            if ft <= f - 0.5 * decrease.max(0.0) * 1e-4 && ft <= f {
                moved = dist2 > 0.0;
                let done = dist2.sqrt() < 1e-15 * (1.0 + total);
                y = trial;
                f = ft;
                if done {
                    moved = false;
                }
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let mut a = vec![0.0; nu.len()];
    for (&v, &(i, _, w)) in y.iter().zip(&atoms) {
        a[i] = v / (q * (w + v));
    }
    (f, a)
}
