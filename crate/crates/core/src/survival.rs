//! A sufficient condition for survival.
//!
//! Over the admissible set `𝒜 = {a : S → [0, 1/q) : Σ ν(j)/(1 − q a(j)) = 1/(1 − q)}`
//! the functional
//!
//! ```text
//! J(a) = Σ_k ν(k) (1−q) a(k) / (1 − q a(k)) · log(a(k)/k)
//! ```
//!
//! has a unique minimizer of the form `a(j) = −W₀(−C j)/q`, and the process
//! survives with positive probability whenever `min J < 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{ExtReal, OffspringLaw};

const BISECTION_ITER: usize = 200;

/// Principal branch of the Lambert W function: the solution `y ≥ −1` of
/// `y e^y = x`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain("W0 of NaN".into()));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    // e x + 1, with the product split so the cancellation near the branch
    // point loses as little as possible
    let shifted = std::f64::consts::E.mul_add(x, 1.0);
    if shifted < 0.0 {
        if shifted > -4.0 * f64::EPSILON {
            return Ok(-1.0);
        }
        return Err(Error::Domain(format!("W0 is undefined at {x} < -1/e")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = if x < -0.25 {
        let p = (2.0 * shifted).sqrt();
        -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * 11.0 / 72.0))
    } else if x <= 3.0 {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    if w <= -1.0 {
        return Ok(-1.0);
    }
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 <= 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let next = (w - step).max(-1.0);
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs());
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

fn check_inputs(nu: &OffspringLaw, q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )));
    }
    if nu
        .support()
        .iter()
        .zip(nu.weights())
        .all(|(&k, &w)| k == 0 || w == 0.0)
    {
        return Err(Error::Bracket(
            "the law puts no mass on positive offspring counts".into(),
        ));
    }
    Ok(())
}

/// `J(a)`; `+∞` when `a(0) > 0` with `0 ∈ S`.
pub fn j_functional(a: &[f64], nu: &OffspringLaw, q: f64) -> Result<ExtReal> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )));
    }
    if a.len() != nu.len() {
        return Err(Error::InvalidArgument(format!(
            "activity vector has {} entries for a support of size {}",
            a.len(),
            nu.len()
        )));
    }
    let mut total = 0.0;
    for ((&k, &w), &x) in nu.support().iter().zip(nu.weights()).zip(a) {
        if !(x >= 0.0 && q * x < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "a({k}) = {x} outside [0, 1/q)"
            )));
        }
        if k == 0 {
            if x > 0.0 && w > 0.0 {
                return ExtReal::new(f64::INFINITY);
            }
            continue;
        }
        if x == 0.0 || w == 0.0 {
            continue;
        }
        total += w * (1.0 - q) * x / (1.0 - q * x) * (x / k as f64).ln();
    }
    ExtReal::new(total)
}

/// `Σ_j ν(j)/(1 − q a(j)) − 1/(1 − q)`.
fn constraint(a: &[f64], nu: &OffspringLaw, q: f64) -> f64 {
    let s: f64 = nu
        .weights()
        .iter()
        .zip(a)
        .map(|(w, x)| w / (1.0 - q * x))
        .sum();
    s - 1.0 / (1.0 - q)
}

/// `∂_k J / ∂_k g = (1−q)/q · (1 − q a(k) + log(a(k)/k))` for each positive atom
/// charged by `ν`; equal entries characterize a constrained critical point.
pub fn lagrange_ratios(a: &[f64], nu: &OffspringLaw, q: f64) -> Vec<f64> {
    nu.support()
        .iter()
        .zip(nu.weights())
        .zip(a)
        .filter(|((&k, &w), _)| k > 0 && w > 0.0)
        .map(|((&k, _), &x)| (1.0 - q) / q * (1.0 - q * x + (x / k as f64).ln()))
        .collect()
}

/// Spread of [`lagrange_ratios`] relative to their mean magnitude (floored at 1).
pub fn stationarity_deviation(a: &[f64], nu: &OffspringLaw, q: f64) -> f64 {
    let r = lagrange_ratios(a, nu, q);
    if r.is_empty() {
        return 0.0;
    }
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    (hi - lo) / mean.abs().max(1.0)
}

/// Bisection for the increasing map `u ↦ constraint(a(u))` on `(0, 1)`,
/// where `u` is `q a` at the largest charged atom.
fn solve_on_unit_interval<F: Fn(f64) -> Vec<f64>>(
    family: F,
    nu: &OffspringLaw,
    q: f64,
) -> Result<(f64, Vec<f64>)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let f = |u: f64| constraint(&family(u), nu, q);
    if !(f(1e-300) < 0.0) {
        return Err(Error::Bracket(
            "constraint is already met at the lower end".into(),
        ));
    }
    for _ in 0..BISECTION_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick the endpoint with the smaller residual
    let u = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Bracket(format!(
            "root escaped the bracket (u = {u})"
        )));
    }
    Ok((u, family(u)))
}

fn largest_charged_atom(nu: &OffspringLaw) -> u32 {
    nu.support()
        .iter()
        .zip(nu.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&k, _)| k)
        .max()
        .unwrap_or(0)
}

/// `b(k) = c k` on the admissible set, with `J(b)`.
pub fn proportional_baseline(nu: &OffspringLaw, q: f64) -> Result<(f64, f64)> {
    check_inputs(nu, q)?;
    let kmax = largest_charged_atom(nu) as f64;
    let family = |u: f64| -> Vec<f64> {
        let c = u / (q * kmax);
        nu.support()
            .iter()
            .map(|&k| c * (k as f64).min(kmax))
            .collect()
    };
    let (u, b) = solve_on_unit_interval(family, nu, q)?;
    let c = u / (q * kmax);
    Ok((c, j_functional(&b, nu, q)?.get()))
}

/// Outcome of the survival criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalReport {
    /// Lagrange constant: `a(j) = −W₀(−C j)/q`.
    #[serde(rename = "C")]
    pub c: f64,
    pub a_opt: Vec<f64>,
    pub j_min: f64,
    /// `J_min < 0`.
    pub survives_certified: bool,
    pub baseline_c: f64,
    pub j_baseline: f64,
    pub constraint_residual: f64,
    pub stationarity_deviation: f64,
    /// Set when `0 ∉ S`: every individual has a child, so survival is
    /// certain whatever the criterion says.
    pub trivial_survival: Option<String>,
}

/// The minimizer of `J` over `𝒜`, found by bisection along the Lambert-W family.
pub fn solve_survival_minimizer(nu: &OffspringLaw, q: f64) -> Result<SurvivalReport> {
    check_inputs(nu, q)?;
    let kmax = largest_charged_atom(nu) as f64;
    // C = u e^{-u} / kmax makes q a(kmax) = u
    let lagrange = |u: f64| u * (-u).exp() / kmax;
    let family = |u: f64| -> Vec<f64> {
        let c = lagrange(u);
        nu.support()
            .iter()
            .map(|&k| {
                if k == 0 {
                    0.0
                } else if k as f64 >= kmax {
                    // atoms above kmax carry no mass and only need to stay admissible
                    u / q
                } else {
                    -lambert_w0(-c * k as f64).expect("argument stays above -1/e") / q
                }
            })
            .collect()
    };
    let (u, a) = solve_on_unit_interval(family, nu, q)?;
    let j_min = j_functional(&a, nu, q)?.get();
    let (baseline_c, j_baseline) = proportional_baseline(nu, q)?;
    let trivial = (!nu.support().contains(&0) || nu.weight_of(0) == 0.0)
        .then(|| "min offspring ≥ 1".to_string());
    Ok(SurvivalReport {
        c: lagrange(u),
        constraint_residual: constraint(&a, nu, q),
        stationarity_deviation: stationarity_deviation(&a, nu, q),
        a_opt: a,
        j_min,
        survives_certified: j_min < 0.0,
        baseline_c,
        j_baseline,
        trivial_survival: trivial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const INV_E: f64 = 0.367_879_441_171_442_33;

    fn bisect_w(x: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0f64.max(x.ln_1p()) + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(lambert_w0(-INV_E).unwrap(), -1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(
            lambert_w0(1.0).unwrap(),
            0.567_143_290_409_783_8,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(lambert_w0(1.0).unwrap(), bisect_w(1.0), epsilon = 1e-9);
        assert!(matches!(lambert_w0(-0.4), Err(Error::Domain(_))));
        for x in [-0.3, -0.1, 1e-8, 0.5, 2.0, 10.0, 1e3, 1e6] {
            assert_abs_diff_eq!(
                lambert_w0(x).unwrap(),
                bisect_w(x),
                epsilon = 1e-9 * (1.0 + x.abs().ln_1p())
            );
        }
    }

    #[test]
    fn j_examples() {
        let nu = OffspringLaw::uniform(vec![1, 2]).unwrap();
        let j = j_functional(&[1.0, 1.0], &nu, 1.0 / 3.0).unwrap().get();
        assert_abs_diff_eq!(j, -0.5 * 2f64.ln(), epsilon = 1e-15);
        let nu0 = OffspringLaw::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        assert_eq!(
            j_functional(&[0.1, 1.0], &nu0, 0.5).unwrap().get(),
            f64::INFINITY
        );
        assert!(j_functional(&[0.0], &nu0, 0.5).is_err());
    }

    #[test]
    fn flagship_minimizer() {
        let nu = OffspringLaw::uniform(vec![1, 2]).unwrap();
        let r = solve_survival_minimizer(&nu, 1.0 / 3.0).unwrap();
        assert!(r.survives_certified);
        assert!(r.j_min <= -0.5 * 2f64.ln() + 1e-12);
        assert!(r.j_min <= r.j_baseline + 1e-9);
        assert!(r.constraint_residual.abs() < 1e-10);
        assert!(r.stationarity_deviation < 1e-6);
        assert_eq!(r.trivial_survival.as_deref(), Some("min offspring ≥ 1"));
        for (&k, &a) in nu.support().iter().zip(&r.a_opt) {
            assert_abs_diff_eq!(
                a,
                -lambert_w0(-r.c * k as f64).unwrap() * 3.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn single_atom_laws() {
        let q = 0.4;
        let one = OffspringLaw::dirac(1);
        let r = solve_survival_minimizer(&one, q).unwrap();
        assert_abs_diff_eq!(r.a_opt[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.j_min, 0.0, epsilon = 1e-12);
        assert!(!r.survives_certified);
        assert!(r.trivial_survival.is_some());

        // a single atom pins the admissible set to one point: 1/(1 − 2qc) = 1/(1 − q)
        let two = OffspringLaw::dirac(2);
        let (c, jb) = proportional_baseline(&two, q).unwrap();
        assert_abs_diff_eq!(c, 0.5, epsilon = 1e-12);
        let b = 2.0 * c;
        assert_abs_diff_eq!(
            jb,
            (1.0 - q) * b / (1.0 - q * b) * (b / 2.0).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            jb,
            j_functional(&[b], &two, q).unwrap().get(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            solve_survival_minimizer(&OffspringLaw::dirac(0), 0.5),
            Err(Error::Bracket(_))
        ));
        let nu = OffspringLaw::uniform(vec![1, 2]).unwrap();
        assert!(solve_survival_minimizer(&nu, 1.0).is_err());
    }
}
