//! Logarithmic moment generating functions and their Legendre transforms.
//!
//! For memory parameter `q ∈ (0, 1)` the limiting log-MGF of the reinforced
//! empirical measure is
//!
//! ```text
//! Λ_q(λ) = log q − log ∫_0^∞ ∏_k (1 − t e^{λ(k)})_+^{c_k} dt,   c_k = ν(k)(1 − q)/q.
//! ```
//!
//! The integrand vanishes beyond `t = e^{−λ̄}` (`λ̄` the largest finite
//! entry), so after `t = e^{−λ̄} s` everything reduces to integrals over
//! `[0, 1]` with an algebraic zero of order `Σ_{k: λ(k)=λ̄} c_k` at `s = 1`,
//! handled by [`quadrature::integrate_endpoint_weighted`].

pub mod polynomial;
pub mod quadrature;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measures::{self, ExtReal, LogWeights, OffspringLaw, ProbVector};

pub use quadrature::QuadratureSpec;

/// Convergence target of the dual solver: `‖∇Λ_q(λ) − ρ‖_∞`.
pub const DUAL_TOLERANCE: f64 = 1e-9;

/// Largest Newton move per coordinate in one iteration.
const MAX_NEWTON_STEP: f64 = 2.0;
const DUAL_MAX_ITER: usize = 200;
const HESSIAN_STEP: f64 = 1e-5;
/// Newton budget before a single free coordinate switches to bisection.
const SCALAR_NEWTON_ITER: usize = 40;
/// Half-width of the bisection bracket in the variable of [`signed_log_scale`].
const BISECTION_RANGE: f64 = 700.0;

fn check_q_open(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )))
    }
}

fn check_lengths(lam: &LogWeights, nu: &OffspringLaw) -> Result<()> {
    if lam.len() == nu.len() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{} log-weights for a law on {} atoms",
            lam.len(),
            nu.len()
        )))
    }
}

/// `log Σ ν(k) e^{λ(k)}`; `-∞` when every entry of `λ` is `-∞`.
pub fn lambda0(lam: &LogWeights, nu: &OffspringLaw) -> Result<f64> {
    check_lengths(lam, nu)?;
    let Some(top) = lam.max_finite() else {
        return Ok(f64::NEG_INFINITY);
    };
    let s: f64 = lam
        .values()
        .iter()
        .zip(nu.weights())
        .map(|(l, w)| w * (l - top).exp())
        .sum();
    Ok(top + s.ln())
}

/// Legendre transform of [`lambda0`], which is the relative entropy `H(ρ|ν)`.
pub fn lambda0_star(rho: &ProbVector, nu: &OffspringLaw) -> Result<ExtReal> {
    measures::relative_entropy(rho, &nu.on_support(rho.support())?)
}

/// The integrand of `Λ_q` after rescaling to `[0, 1]`, split into the atoms
/// attaining the maximum of `λ` (which produce the endpoint zero) and the rest.
struct Kernel {
    top: f64,
    /// `c_k` for every atom.
    exponents: Vec<f64>,
    /// Sum of the exponents of the maximal atoms.
    alpha: f64,
    ties: Vec<usize>,
    /// `(index, r_k, c_k)` with `r_k = e^{λ(k) − λ̄} < 1`.
    others: Vec<(usize, f64, f64)>,
    /// `1 − r_k` for each entry of `others`, computed without cancellation.
    gaps: Vec<f64>,
}

impl Kernel {
    fn new(lam: &LogWeights, nu: &OffspringLaw, q: f64) -> Result<Self> {
        check_q_open(q)?;
        check_lengths(lam, nu)?;
        let top = lam
            .max_finite()
            .ok_or_else(|| Error::InvalidArgument("log-weights are identically -inf".into()))?;
        let ratio = (1.0 - q) / q;
        let exponents: Vec<f64> = nu.weights().iter().map(|w| w * ratio).collect();
        let mut ties = Vec::new();
        let mut others = Vec::new();
        let mut gaps = Vec::new();
        let mut alpha = 0.0;
        for (i, &l) in lam.values().iter().enumerate() {
            if l == f64::NEG_INFINITY {
                continue;
            }
            let r = (l - top).exp();
            if l == top {
                ties.push(i);
                alpha += exponents[i];
            } else {
                others.push((i, r, exponents[i]));
                gaps.push(-(l - top).exp_m1());
            }
        }
        Ok(Self {
            top,
            exponents,
            alpha,
            ties,
            others,
            gaps,
        })
    }

    /// `Σ c_k log(1 − s r_k)` over the non-maximal atoms, with `t = 1 − s`.
    fn log_g(&self, s: f64, t: f64) -> f64 {
        self.others
            .iter()
            .zip(&self.gaps)
            .map(|(&(_, _, c), &m)| c * (t + s * m).ln())
            .sum()
    }

    fn normalizer(&self, spec: &QuadratureSpec) -> Result<f64> {
        if let Some(v) = self.polynomial_normalizer(spec) {
            return Ok(v);
        }
        let g = |s: f64, t: f64| self.log_g(s, t);
        Ok(quadrature::integrate_endpoint_weighted(&g, self.alpha, 0.0, spec)?.value)
    }

    /// Integer-exponent factors `(r, e)` over all active atoms, if the fast path applies.
    fn polynomial_factors(&self, spec: &QuadratureSpec) -> Option<Vec<(usize, f64, u32)>> {
        if !spec.polynomial_fast_path {
            return None;
        }
        let active: Vec<(usize, f64, f64)> = self
            .ties
            .iter()
            .map(|&i| (i, 1.0, self.exponents[i]))
            .chain(self.others.iter().copied())
            .collect();
        let cs: Vec<f64> = active.iter().map(|a| a.2).collect();
        let degrees = polynomial::integer_exponents(&cs)?;
        Some(
            active
                .iter()
                .zip(degrees)
                .map(|(a, d)| (a.0, a.1, d))
                .collect(),
        )
    }

    fn polynomial_normalizer(&self, spec: &QuadratureSpec) -> Option<f64> {
        let factors = self.polynomial_factors(spec)?;
        let fr: Vec<(f64, u32)> = factors.iter().map(|f| (f.1, f.2)).collect();
        Some(polynomial::integrate_unit(&polynomial::expand(&fr)))
    }

    fn value(&self, q: f64, spec: &QuadratureSpec) -> Result<f64> {
        let i = self.normalizer(spec)?;
        Ok(q.ln() + self.top - i.ln())
    }

    fn gradient(&self, n_atoms: usize, spec: &QuadratureSpec) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; n_atoms];
        if let Some(factors) = self.polynomial_factors(spec) {
            let fr: Vec<(f64, u32)> = factors.iter().map(|f| (f.1, f.2)).collect();
            let norm = polynomial::integrate_unit(&polynomial::expand(&fr));
            for (j, &(idx, r, d)) in factors.iter().enumerate() {
                // c_j s r_j (1 - s r_j)^{d_j - 1} ∏_{k≠j} (1 - s r_k)^{d_k}
                let mut reduced = fr.clone();
                reduced[j].1 = d - 1;
                let num =
                    polynomial::integrate_unit(&polynomial::times_s(&polynomial::expand(&reduced)));
                grad[idx] = self.exponents[idx] * r * num / norm;
            }
            return Ok(grad);
        }
        let norm = self.normalizer(spec)?;
        for &j in &self.ties {
            let c = self.exponents[j];
            let h = |s: f64, t: f64| self.log_g(s, t) + (-t).ln_1p();
            let abs_tol = spec.rel_tol() * norm / c;
            let num = quadrature::integrate_endpoint_weighted(&h, self.alpha - 1.0, abs_tol, spec)?;
            grad[j] = c * num.value / norm;
        }
        for (&(j, r, c), &m) in self.others.iter().zip(&self.gaps) {
            let h = |s: f64, t: f64| self.log_g(s, t) + (s * r).ln() - (t + s * m).ln();
            let abs_tol = spec.rel_tol() * norm / c;
            let num = quadrature::integrate_endpoint_weighted(&h, self.alpha, abs_tol, spec)?;
            grad[j] = c * num.value / norm;
        }
        Ok(grad)
    }
}

/// `Λ_q(λ)` for `q ∈ (0, 1)`.
pub fn lambda_q(lam: &LogWeights, nu: &OffspringLaw, q: f64, spec: &QuadratureSpec) -> Result<f64> {
    Kernel::new(lam, nu, q)?.value(q, spec)
}

/// `∇Λ_q(λ)`, a probability vector on the support of `ν` vanishing exactly
/// where `λ = -∞`.
pub fn grad_lambda_q(
    lam: &LogWeights,
    nu: &OffspringLaw,
    q: f64,
    spec: &QuadratureSpec,
) -> Result<ProbVector> {
    let grad = Kernel::new(lam, nu, q)?.gradient(nu.len(), spec)?;
    let total: f64 = grad.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Quadrature {
            rel_error: (total - 1.0).abs(),
            subdivisions: 0,
        });
    }
    ProbVector::from_masses(nu.support().to_vec(), &grad)
}

/// Value and maximizer of `λ ↦ ⟨ρ, λ⟩ − Λ_q(λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDual {
    /// `Λ_q^*(ρ)`.
    pub value: f64,
    /// The maximizer `λ_ρ`, shifted so that its largest entry is 0; `-∞`
    /// exactly where `ρ` vanishes.
    pub argdual: LogWeights,
    /// `‖∇Λ_q(λ_ρ) − ρ‖_∞`.
    pub residual: f64,
    pub iterations: usize,
}

/// `Λ_q^*(ρ)` with default quadrature settings.
pub fn lambda_q_star(rho: &ProbVector, nu: &OffspringLaw, q: f64) -> Result<RateDual> {
    lambda_q_star_with(rho, nu, q, &QuadratureSpec::default(), None)
}

struct DualProblem<'a> {
    rho: &'a ProbVector,
    nu: &'a OffspringLaw,
    q: f64,
    spec: &'a QuadratureSpec,
    /// Atoms where ρ > 0, except the anchor.
    free: Vec<usize>,
    anchor: usize,
}

impl DualProblem<'_> {
    fn lambda(&self, x: &[f64]) -> LogWeights {
        let mut v = vec![f64::NEG_INFINITY; self.nu.len()];
        v[self.anchor] = 0.0;
        for (&i, &xi) in self.free.iter().zip(x) {
            v[i] = xi;
        }
        LogWeights::new(v).expect("finite or -inf entries")
    }

    fn objective(&self, lam: &LogWeights) -> Result<f64> {
        let p = measures::pair(self.rho, lam)?.get();
        Ok(p - lambda_q(lam, self.nu, self.q, self.spec)?)
    }

    /// `∇Λ_q − ρ` on the free coordinates, plus the full sup-norm residual.
    fn residual(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let lam = self.lambda(x);
        let g = Kernel::new(&lam, self.nu, self.q)?.gradient(self.nu.len(), self.spec)?;
        let full = g
            .iter()
            .zip(self.rho.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let reduced = self
            .free
            .iter()
            .map(|&i| g[i] - self.rho.weights()[i])
            .collect();
        Ok((reduced, full))
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jm = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for col in 0..n {
            // ∇Λ_q is only Hölder near ties of λ, so the difference must not
            // straddle another coordinate (the anchor sits at 0)
            let gap = x
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != col)
                .map(|(_, v)| (v - x[col]).abs())
                .fold(x[col].abs(), f64::min);
            let h = if gap > 0.0 {
                HESSIAN_STEP.min(0.25 * gap)
            } else {
                HESSIAN_STEP
            };
            xp[col] = x[col] + h;
            let (gp, _) = self.residual(&xp)?;
            xp[col] = x[col] - h;
            let (gm, _) = self.residual(&xp)?;
            xp[col] = x[col];
            for row in 0..n {
                jm[(row, col)] = (gp[row] - gm[row]) / (2.0 * h);
            }
        }
        // symmetrize; the exact Hessian is symmetric
        Ok((&jm + jm.transpose()) * 0.5)
    }

    /// Last resort once Newton stops making progress. With one free coordinate
    /// the residual is monotone, so bisection in a variable that resolves
    /// `|x|` down to `1e-300` settles maximizers lying extremely close to a
    /// tie (small exponents make `∇Λ_q` vary like `|x|^α` there).
    fn stalled(&self, x: &[f64], res: f64, iterations: usize) -> Result<RateDual> {
        let mut best = (x.to_vec(), res);
        let mut iterations = iterations;
        if self.free.len() == 1 {
            let eval = |y: f64| -> Result<(f64, f64, f64)> {
                let x = signed_log_scale(y);
                let (g, full) = self.residual(&[x])?;
                Ok((x, g[0], full))
            };
            let (mut lo, mut hi) = (-BISECTION_RANGE, BISECTION_RANGE);
            let (_, glo, _) = eval(lo)?;
            let (_, ghi, _) = eval(hi)?;
            if glo < 0.0 && ghi > 0.0 {
                while hi - lo > 1e-13 * (1.0 + lo.abs().max(hi.abs()))
                    && iterations < DUAL_MAX_ITER + 200
                {
                    iterations += 1;
                    let mid = 0.5 * (lo + hi);
                    let (xm, gm, full) = eval(mid)?;
                    if full < best.1 {
                        best = (vec![xm], full);
                    }
                    if full < DUAL_TOLERANCE {
                        break;
                    }
                    if gm < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
        }
        if self.free.len() > 1 {
            iterations = self.newton_scaled(&mut best, iterations)?;
        }
        let out = self.finish(&best.0, best.1, iterations)?;
        if best.1 < DUAL_TOLERANCE {
            return Ok(out);
        }
        Err(Error::SolverStall {
            residual: best.1,
            iterations,
            best: Box::new(out),
        })
    }

    /// Newton on the reduced residual in the coordinates of
    /// [`signed_log_scale`], with backtracking on its Euclidean norm. Updates
    /// `best` in place and returns the iteration count.
    fn newton_scaled(&self, best: &mut (Vec<f64>, f64), iterations: usize) -> Result<usize> {
        let to_x = |y: &[f64]| -> Vec<f64> { y.iter().map(|&v| signed_log_scale(v)).collect() };
        let n = self.free.len();
        let mut y: Vec<f64> = best
            .0
            .iter()
            .map(|&v| inverse_signed_log_scale(v))
            .collect();
        let (mut g, _) = self.residual(&to_x(&y))?;
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut iterations = iterations;
        for _ in 0..DUAL_MAX_ITER {
            if best.1 < DUAL_TOLERANCE {
                break;
            }
            iterations += 1;
            let mut jm = DMatrix::zeros(n, n);
            let mut yp = y.clone();
            for col in 0..n {
                let h = 1e-5 * (1.0 + y[col].abs());
                yp[col] = y[col] + h;
                let (gp, _) = self.residual(&to_x(&yp))?;
                yp[col] = y[col] - h;
                let (gm, _) = self.residual(&to_x(&yp))?;
                yp[col] = y[col];
                for row in 0..n {
                    jm[(row, col)] = (gp[row] - gm[row]) / (2.0 * h);
                }
            }
            let rhs = -DVector::from_vec(g.clone());
            let Some(d) = jm
                .lu()
                .solve(&rhs)
                .filter(|d| d.iter().all(|v| v.is_finite()))
            else {
                break;
            };
            let mut d: Vec<f64> = d.iter().copied().collect();
            let longest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if longest > 50.0 {
                d.iter_mut().for_each(|v| *v *= 50.0 / longest);
            }
            let n0 = norm(&g);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let xt = to_x(&trial);
                if let Ok((gt, full)) = self.residual(&xt) {
                    if norm(&gt) < n0 {
                        y = trial;
                        g = gt;
                        if full < best.1 {
                            *best = (xt, full);
                        }
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Ok(iterations)
    }

    fn finish(&self, x: &[f64], residual: f64, iterations: usize) -> Result<RateDual> {
        let lam = self.lambda(x);
        let top = lam.max_finite().expect("anchor is finite");
        let lam = lam.shifted(-top);
        let value = self.objective(&lam)?;
        Ok(RateDual {
            value,
            argdual: lam,
            residual,
            iterations,
        })
    }
}

/// Odd, increasing map of `[-700, 700]` onto roughly `[-1e4, 1e4]` with
/// `|x| ≈ 1e-300 e^{|y|}`, so equal steps in `y` cover every scale of `x`.
fn signed_log_scale(y: f64) -> f64 {
    let m = if y.abs() < 600.0 {
        1e-300 * y.abs().exp_m1()
    } else {
        (y.abs() - 300.0 * std::f64::consts::LN_10).exp()
    };
    m.copysign(y)
}

fn inverse_signed_log_scale(x: f64) -> f64 {
    let a = x.abs();
    let y = if a < 1e8 {
        (a * 1e300).ln_1p()
    } else {
        a.ln() + 300.0 * std::f64::consts::LN_10
    };
    y.copysign(x)
}

/// `Λ_q^*(ρ)` by damped Newton on the dual, optionally warm-started from a
/// previous maximizer.
pub fn lambda_q_star_with(
    rho: &ProbVector,
    nu: &OffspringLaw,
    q: f64,
    spec: &QuadratureSpec,
    warm: Option<&LogWeights>,
) -> Result<RateDual> {
    check_q_open(q)?;
    rho.same_support(nu.as_prob())?;
    let positive: Vec<usize> = rho.positive_atoms().map(|(i, _, _)| i).collect();
    let anchor = *positive
        .iter()
        .max_by(|&&a, &&b| rho.weights()[a].total_cmp(&rho.weights()[b]))
        .expect("a probability vector has a positive atom");
    let free: Vec<usize> = positive.iter().copied().filter(|&i| i != anchor).collect();
    let problem = DualProblem {
        rho,
        nu,
        q,
        spec,
        free,
        anchor,
    };

    let log_ratio = |i: usize| (rho.weights()[i] / nu.weights()[i]).ln();
    let mut x: Vec<f64> = match warm {
        Some(w) if w.len() == nu.len() && w.values()[anchor].is_finite() => problem
            .free
            .iter()
            .map(|&i| {
                let v = w.values()[i] - w.values()[anchor];
                if v.is_finite() {
                    v
                } else {
                    log_ratio(i) - log_ratio(anchor)
                }
            })
            .collect(),
        _ => problem
            .free
            .iter()
            .map(|&i| log_ratio(i) - log_ratio(anchor))
            .collect(),
    };

    let (mut g, mut res) = problem.residual(&x)?;
    let mut iterations = 0;
    while res >= DUAL_TOLERANCE {
        if iterations >= DUAL_MAX_ITER
            || (problem.free.len() == 1 && iterations >= SCALAR_NEWTON_ITER)
        {
            return problem.stalled(&x, res, iterations);
        }
        iterations += 1;
        let jm = problem.jacobian(&x)?;
        let rhs = -DVector::from_vec(g.clone());
        let newton = jm
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|d| d.iter().all(|v| v.is_finite()));
        let mut direction: Vec<f64> = match newton {
            Some(d) => d.iter().copied().collect(),
            None => g.iter().map(|v| -v).collect(),
        };
        // a flat region of ∇Λ_q can produce huge Newton steps
        let longest = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if longest > MAX_NEWTON_STEP {
            direction
                .iter_mut()
                .for_each(|v| *v *= MAX_NEWTON_STEP / longest);
        }
        let f0 = problem.objective(&problem.lambda(&x))?;
        // the dual objective has gradient -g on the free coordinates
        let slope: f64 = -g.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>();
        let floor = f0 - 1e-12 * (1.0 + f0.abs());
        let mut accepted = false;
        if slope > 0.0 {
            let mut t = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = x.iter().zip(&direction).map(|(a, d)| a + t * d).collect();
                if let (Ok(ft), Ok((gt, rt))) = (
                    problem.objective(&problem.lambda(&trial)),
                    problem.residual(&trial),
                ) {
                    if ft >= f0 + 1e-4 * t * slope || (rt < res && ft >= floor) {
                        x = trial;
                        g = gt;
                        res = rt;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if !accepted {
            // gradient ascent on the concave objective as a fallback
            let gnorm2: f64 = g.iter().map(|v| v * v).sum();
            let mut t = MAX_NEWTON_STEP / g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            for _ in 0..80 {
                let trial: Vec<f64> = x.iter().zip(&g).map(|(a, gi)| a - t * gi).collect();
                let ft = problem.objective(&problem.lambda(&trial))?;
                let (gt, rt) = problem.residual(&trial)?;
                if ft >= f0 + 1e-4 * t * gnorm2 || (rt < res && ft >= floor) {
                    x = trial;
                    g = gt;
                    res = rt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return problem.stalled(&x, res, iterations);
            }
        }
    }
    problem.finish(&x, res, iterations)
}

/// Concentration target `ν̄_q = ∇Λ_q(ln)`; for `q = 0` the size-biased law.
pub fn nu_bar_q(nu: &OffspringLaw, q: f64) -> Result<ProbVector> {
    if q == 0.0 {
        return measures::size_bias(nu);
    }
    check_q_open(q)?;
    let ln = LogWeights::ln(nu.support());
    if ln.is_all_neg_inf() {
        return Err(Error::DegenerateLaw("law concentrated on 0".into()));
    }
    grad_lambda_q(&ln, nu, q, &QuadratureSpec::default())
}

/// Exponential growth rate of the mean generation size: `Λ_q(ln)`, or `log m_ν` at `q = 0`.
pub fn growth_exponent(nu: &OffspringLaw, q: f64) -> Result<f64> {
    if q == 0.0 {
        return Ok(nu.mean().ln());
    }
    let ln = LogWeights::ln(nu.support());
    if ln.is_all_neg_inf() {
        return Ok(f64::NEG_INFINITY);
    }
    lambda_q(&ln, nu, q, &QuadratureSpec::default())
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in u.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Projection onto `{ρ ∈ simplex : ⟨ρ, w⟩ ≥ c}`, assumed non-empty.
fn project_halfspace_simplex(y: &[f64], w: &[f64], c: f64) -> Vec<f64> {
    let dot = |p: &[f64]| p.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let base = project_simplex(y);
    if dot(&base) >= c {
        return base;
    }
    // KKT: the projection is Π_Δ(y + μ w) for the μ ≥ 0 making the constraint active
    let shifted = |mu: f64| -> Vec<f64> {
        let z: Vec<f64> = y.iter().zip(w).map(|(a, b)| a + mu * b).collect();
        project_simplex(&z)
    };
    let mut hi = 1.0;
    while dot(&shifted(hi)) < c && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dot(&shifted(mid)) < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    shifted(hi)
}

/// Minimizer of `Λ_q^*` over `{ρ : ⟨ρ, w⟩ ≥ c}`, by projected gradient
/// descent with `∇Λ_q^*(ρ) = λ_ρ`.
pub fn argmin_rate_over_halfspace(
    nu: &OffspringLaw,
    q: f64,
    w: &[f64],
    c: f64,
) -> Result<(ProbVector, RateDual)> {
    check_q_open(q)?;
    if w.len() != nu.len() {
        return Err(Error::InvalidArgument(
            "constraint vector length differs from support".into(),
        ));
    }
    let wmax = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if wmax < c {
        return Err(Error::Infeasible(format!(
            "max_k w(k) = {wmax} < {c}: no probability vector satisfies the constraint"
        )));
    }
    let spec = QuadratureSpec::default();
    let dot = |p: &[f64]| p.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    if dot(nu.weights()) >= c {
        let rho = nu.as_prob().clone();
        let dual = lambda_q_star_with(&rho, nu, q, &spec, None)?;
        return Ok((rho, dual));
    }

    const MIN_LOG: f64 = -50.0;
    let grad_of = |d: &RateDual| -> Vec<f64> {
        let v: Vec<f64> = d.argdual.values().iter().map(|x| x.max(MIN_LOG)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - m).collect()
    };
    let mut x = project_halfspace_simplex(nu.weights(), w, c);
    let mut rho = ProbVector::new(nu.support().to_vec(), x.clone())?;
    let mut dual = lambda_q_star_with(&rho, nu, q, &spec, None)?;
    let mut step = 0.1;
    for _ in 0..2000 {
        let g = grad_of(&dual);
        let unit: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        let pg = project_halfspace_simplex(&unit, w, c);
        let pg_norm = pg
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if pg_norm < 1e-8 {
            break;
        }
        let mut moved = false;
        for _ in 0..60 {
            let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let cand = project_halfspace_simplex(&y, w, c);
            let cand_rho = ProbVector::new(nu.support().to_vec(), cand.clone())?;
            let cand_dual = lambda_q_star_with(&cand_rho, nu, q, &spec, Some(&dual.argdual))?;
            let decrease: f64 = g
                .iter()
                .zip(cand.iter().zip(&x))
                .map(|(gi, (a, b))| gi * (a - b))
                .sum();
            let dist2: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            if cand_dual.value <= dual.value + decrease + dist2 / (2.0 * step) + 1e-15 {
                x = cand;
                rho = cand_rho;
                dual = cand_dual;
                moved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((rho, dual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flagship() -> OffspringLaw {
        OffspringLaw::uniform(vec![1, 2]).unwrap()
    }

    /// Closed form for ν uniform on {1,2}, q = 1/3.
    fn closed_lambda(x: f64, y: f64) -> f64 {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        2f64.ln() + hi - (3.0 - (lo - hi).exp()).ln()
    }

    fn closed_star(p: f64) -> f64 {
        let p = p.min(1.0 - p);
        let lead = if p == 0.0 {
            0.0
        } else {
            p * (3.0 * p / (p + 1.0)).ln()
        };
        lead - 2f64.ln() + (3.0 / (p + 1.0)).ln()
    }

    #[test]
    fn dual_on_skewed_law() {
        // ∇Λ_q is nearly vertical where the rare atom overtakes the common one
        let nu = OffspringLaw::new(vec![1, 5], vec![0.997, 0.003]).unwrap();
        let rho = ProbVector::new(vec![1, 5], vec![0.75, 0.25]).unwrap();
        for q in [0.05, 0.3, 0.6, 0.9] {
            let d = lambda_q_star(&rho, &nu, q).unwrap();
            assert!(d.residual < DUAL_TOLERANCE);
            let g = grad_lambda_q(&d.argdual, &nu, q, &QuadratureSpec::default()).unwrap();
            assert!(measures::linf_distance(&g, &rho).unwrap() < 1e-8);
        }
    }

    #[test]
    fn lambda0_examples() {
        let nu = flagship();
        assert_eq!(lambda0(&LogWeights::zeros(2), &nu).unwrap(), 0.0);
        let v = lambda0(&LogWeights::ln(nu.support()), &nu).unwrap();
        assert_abs_diff_eq!(v, 1.5f64.ln(), epsilon = 1e-15);
        let lam = LogWeights::new(vec![0.3, -1.2]).unwrap();
        let a = lambda0(&lam, &nu).unwrap();
        let b = lambda0(&lam.shifted(2.5), &nu).unwrap();
        assert_abs_diff_eq!(b - a, 2.5, epsilon = 1e-14);
        let none = LogWeights::new(vec![f64::NEG_INFINITY; 2]).unwrap();
        assert_eq!(lambda0(&none, &nu).unwrap(), f64::NEG_INFINITY);
        let rho = ProbVector::new(vec![1, 2], vec![0.2, 0.8]).unwrap();
        let h = measures::relative_entropy(&rho, nu.as_prob()).unwrap();
        assert_eq!(lambda0_star(&rho, &nu).unwrap(), h);
    }

    #[test]
    fn lambda_q_examples() {
        let spec = QuadratureSpec::default();
        let nu = flagship();
        for &q in &[0.1, 1.0 / 3.0, 0.9] {
            let v = lambda_q(&LogWeights::zeros(2), &nu, q, &spec).unwrap();
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let lam = LogWeights::new(vec![0.0, 2f64.ln()]).unwrap();
        let v = lambda_q(&lam, &nu, 1.0 / 3.0, &spec).unwrap();
        assert_abs_diff_eq!(v, 1.6f64.ln(), epsilon = 1e-10);
        let lam = LogWeights::new(vec![0.4, -0.9]).unwrap();
        let a = lambda_q(&lam, &nu, 0.27, &spec).unwrap();
        let b = lambda_q(&lam.shifted(-3.1), &nu, 0.27, &spec).unwrap();
        assert_abs_diff_eq!(a - b, 3.1, epsilon = 1e-10);
        assert!(lambda_q(&lam, &nu, 1.0, &spec).is_err());
        let none = LogWeights::new(vec![f64::NEG_INFINITY; 2]).unwrap();
        assert!(lambda_q(&none, &nu, 0.5, &spec).is_err());
    }

    #[test]
    fn closed_form_grid() {
        let spec = QuadratureSpec::default();
        let nu = flagship();
        for i in 0..9 {
            for j in 0..9 {
                let x = -2.0 + 0.5 * i as f64;
                let y = -2.0 + 0.5 * j as f64;
                let lam = LogWeights::new(vec![x, y]).unwrap();
                let v = lambda_q(&lam, &nu, 1.0 / 3.0, &spec).unwrap();
                assert_abs_diff_eq!(v, closed_lambda(x, y), epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn polynomial_path_agrees_with_quadrature() {
        let quad = QuadratureSpec::default();
        let poly = quad.with_polynomial_fast_path(true);
        let nu = OffspringLaw::new(vec![1, 2, 4], vec![0.25, 0.25, 0.5]).unwrap();
        // c = ν (1-q)/q = (1, 1, 2) at q = 1/5
        let q = 0.2;
        for lam in [
            vec![0.0, 0.3, -1.0],
            vec![1.0, 1.0, -0.5],
            vec![0.0, f64::NEG_INFINITY, 0.7],
        ] {
            let lam = LogWeights::new(lam).unwrap();
            let a = lambda_q(&lam, &nu, q, &quad).unwrap();
            let b = lambda_q(&lam, &nu, q, &poly).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            let ga = grad_lambda_q(&lam, &nu, q, &quad).unwrap();
            let gb = grad_lambda_q(&lam, &nu, q, &poly).unwrap();
            assert!(measures::linf_distance(&ga, &gb).unwrap() < 1e-11);
        }
    }

    #[test]
    fn gradient_examples() {
        let spec = QuadratureSpec::default();
        let nu = flagship();
        let g = grad_lambda_q(&LogWeights::ln(nu.support()), &nu, 1.0 / 3.0, &spec).unwrap();
        assert_abs_diff_eq!(g.weights()[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(g.weights()[1], 0.8, epsilon = 1e-12);
        let g = grad_lambda_q(&LogWeights::zeros(2), &nu, 0.4, &spec).unwrap();
        assert_abs_diff_eq!(g.weights()[0], 0.5, epsilon = 1e-12);
        // -inf coordinate has zero derivative
        let lam = LogWeights::new(vec![f64::NEG_INFINITY, 0.3]).unwrap();
        let g = grad_lambda_q(&lam, &nu, 0.4, &spec).unwrap();
        assert_eq!(g.weights(), &[0.0, 1.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = QuadratureSpec::default();
        let nu = OffspringLaw::new(vec![0, 1, 3], vec![0.2, 0.5, 0.3]).unwrap();
        let q = 0.45;
        let lam = LogWeights::new(vec![-0.4, 0.2, 0.15]).unwrap();
        let g = grad_lambda_q(&lam, &nu, q, &spec).unwrap();
        let h = 1e-5;
        for j in 0..3 {
            let mut up = lam.values().to_vec();
            let mut down = lam.values().to_vec();
            up[j] += h;
            down[j] -= h;
            let fd = (lambda_q(&LogWeights::new(up).unwrap(), &nu, q, &spec).unwrap()
                - lambda_q(&LogWeights::new(down).unwrap(), &nu, q, &spec).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(g.weights()[j], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn tied_maxima_handled() {
        // three atoms share the maximum: Λ_q only sees the merged exponent
        let spec = QuadratureSpec::default();
        let nu = OffspringLaw::new(vec![1, 2, 3], vec![0.2, 0.3, 0.5]).unwrap();
        let q = 0.6;
        let lam = LogWeights::new(vec![0.7, 0.7, 0.7]).unwrap();
        assert_abs_diff_eq!(lambda_q(&lam, &nu, q, &spec).unwrap(), 0.7, epsilon = 1e-12);
        let g = grad_lambda_q(&lam, &nu, q, &spec).unwrap();
        for (gi, wi) in g.weights().iter().zip(nu.weights()) {
            assert_abs_diff_eq!(gi, wi, epsilon = 1e-12);
        }
        // two-way tie below a third atom
        let lam = LogWeights::new(vec![0.1, 0.5, 0.5]).unwrap();
        let v = lambda_q(&lam, &nu, q, &spec).unwrap();
        let nearly = LogWeights::new(vec![0.1, 0.5, 0.5 + 1e-9]).unwrap();
        let w = lambda_q(&nearly, &nu, q, &spec).unwrap();
        assert!((v - w).abs() < 1e-8);
    }

    #[test]
    fn dual_examples() {
        let nu = flagship();
        let q = 1.0 / 3.0;
        let d = lambda_q_star(nu.as_prob(), &nu, q).unwrap();
        assert_abs_diff_eq!(d.value, 0.0, epsilon = 1e-10);
        for v in d.argdual.values() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-8);
        }
        let rho = ProbVector::new(vec![1, 2], vec![0.2, 0.8]).unwrap();
        let d = lambda_q_star(&rho, &nu, q).unwrap();
        assert_abs_diff_eq!(d.value, closed_star(0.2), epsilon = 1e-9);
        assert_abs_diff_eq!(d.value, 0.0845144, epsilon = 1e-6);
        assert!(d.residual < DUAL_TOLERANCE);
        let d = lambda_q_star(&ProbVector::dirac(&[1, 2], 2).unwrap(), &nu, q).unwrap();
        assert_abs_diff_eq!(d.value, 1.5f64.ln(), epsilon = 1e-10);
        assert_eq!(d.argdual.values()[0], f64::NEG_INFINITY);
        assert_eq!(d.argdual.values()[1], 0.0);
    }

    #[test]
    fn concentration_and_growth() {
        let nu = flagship();
        let a = nu_bar_q(&nu, 0.0).unwrap();
        assert_abs_diff_eq!(a.weights()[0], 1.0 / 3.0, epsilon = 1e-15);
        let b = nu_bar_q(&nu, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(b.weights()[0], 0.2, epsilon = 1e-10);
        assert_eq!(
            nu_bar_q(&OffspringLaw::dirac(2), 0.4).unwrap().weights(),
            &[1.0]
        );
        assert_abs_diff_eq!(
            growth_exponent(&nu, 0.0).unwrap(),
            1.5f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            growth_exponent(&nu, 1.0 / 3.0).unwrap(),
            1.6f64.ln(),
            epsilon = 1e-10
        );
        // zero atom is switched off by ln 0 = -inf
        let with_zero = OffspringLaw::new(vec![0, 1, 2], vec![0.2, 0.4, 0.4]).unwrap();
        let nb = nu_bar_q(&with_zero, 0.5).unwrap();
        assert_eq!(nb.weights()[0], 0.0);
        assert!(nu_bar_q(&OffspringLaw::dirac(0), 0.5).is_err());
    }

    #[test]
    fn halfspace_minimizer() {
        let nu = flagship();
        let q = 1.0 / 3.0;
        let (rho, d) = argmin_rate_over_halfspace(&nu, q, &[0.0, 1.0], 0.8).unwrap();
        assert_abs_diff_eq!(rho.weights()[1], 0.8, epsilon = 1e-9);
        assert_abs_diff_eq!(d.value, 0.0845144, epsilon = 1e-5);
        let (rho, d) = argmin_rate_over_halfspace(&nu, q, &[0.0, 1.0], 0.3).unwrap();
        assert_eq!(rho, *nu.as_prob());
        assert_abs_diff_eq!(d.value, 0.0, epsilon = 1e-10);
        let (rho, _) = argmin_rate_over_halfspace(&nu, q, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(rho, *nu.as_prob());
        assert!(matches!(
            argmin_rate_over_halfspace(&nu, q, &[0.0, 1.0], 1.5),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn halfspace_minimizer_three_atoms_is_stationary() {
        let nu = OffspringLaw::new(vec![1, 2, 3], vec![0.5, 0.3, 0.2]).unwrap();
        let q = 0.4;
        let w = [0.0, 0.0, 1.0];
        let (rho, d) = argmin_rate_over_halfspace(&nu, q, &w, 0.45).unwrap();
        assert_abs_diff_eq!(rho.weights()[2], 0.45, epsilon = 1e-7);
        // KKT on the face ρ(3) = 0.45: λ_ρ(1) = λ_ρ(2)
        let v = d.argdual.values();
        assert_abs_diff_eq!(v[0], v[1], epsilon = 1e-5);
        // no nearby feasible point does better
        for delta in [-1e-3, 1e-3] {
            let r = rho.weights();
            let alt =
                ProbVector::new(vec![1, 2, 3], vec![r[0] + delta, r[1] - delta, r[2]]).unwrap();
            let da = lambda_q_star(&alt, &nu, q).unwrap();
            assert!(da.value >= d.value - 1e-9);
        }
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        let p = project_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }
}
