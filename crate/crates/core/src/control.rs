//! The reinforced Sanov rate function as an optimal-control problem.
//!
//! For a control `η: [0,1] → simplex` with running average
//! `ψ_t = (1/t)∫_0^t η_s ds`, the cost is `∫_0^1 H(η_s | qψ_s + (1−q)ν) ds`,
//! and the rate of `ρ` is the infimum of the cost over controls with
//! `ψ_1 = ρ`. Here controls are piecewise constant on `m` equal steps, which
//! gives an upper bound on the rate computed without any reference to `Λ_q`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{self, ExtReal, OffspringLaw, ProbVector};
use crate::rate::{self, quadrature};
use crate::simulate::rng::RngStream;

/// How `ψ` is sampled inside each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiRule {
    /// One evaluation at the step midpoint: `ψ_{i−1/2} = (Σ_{j<i} η_j + η_i/2)/(i − 1/2)`.
    Midpoint,
    /// Gauss–Legendre with the given number of nodes per step; integrates the
    /// continuous-time cost of the piecewise-constant control.
    GaussLegendre(usize),
}

/// Piecewise-constant control `(η_1, …, η_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    controls: Vec<ProbVector>,
}

impl ControlPath {
    pub fn new(controls: Vec<ProbVector>) -> Result<Self> {
        if controls.len() < 2 {
            return Err(Error::InvalidArgument(
                "a control path needs at least 2 steps".into(),
            ));
        }
        for c in &controls[1..] {
            controls[0].same_support(c)?;
        }
        Ok(Self { controls })
    }

    /// `η_i ≡ ρ` on `m` steps.
    pub fn constant(rho: &ProbVector, m: usize) -> Result<Self> {
        Self::new(vec![rho.clone(); m])
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn controls(&self) -> &[ProbVector] {
        &self.controls
    }

    pub fn support(&self) -> &[u32] {
        self.controls[0].support()
    }

    /// Running averages `ψ_i = (1/i) Σ_{j≤i} η_j` at the step ends.
    pub fn running_averages(&self) -> Result<Vec<ProbVector>> {
        let d = self.support().len();
        let mut acc = vec![0.0; d];
        let mut out = Vec::with_capacity(self.steps());
        for (i, eta) in self.controls.iter().enumerate() {
            for (a, e) in acc.iter_mut().zip(eta.weights()) {
                *a += e;
            }
            let psi: Vec<f64> = acc.iter().map(|a| a / (i + 1) as f64).collect();
            out.push(ProbVector::new(self.support().to_vec(), psi)?);
        }
        Ok(out)
    }

    /// `(1/m) Σ η_i`.
    pub fn mean(&self) -> Result<ProbVector> {
        Ok(self.running_averages()?.pop().expect("at least two steps"))
    }

    fn flat(&self) -> Vec<f64> {
        self.controls
            .iter()
            .flat_map(|c| c.weights().iter().copied())
            .collect()
    }

    fn from_flat(support: &[u32], flat: &[f64]) -> Result<Self> {
        let d = support.len();
        let controls = flat
            .chunks(d)
            .map(|row| ProbVector::from_masses(support.to_vec(), row))
            .collect::<Result<Vec<_>>>()?;
        Self::new(controls)
    }
}

/// Nodes `τ ∈ (0, 1]` and weights within a step.
fn step_nodes(rule: PsiRule) -> Result<Vec<(f64, f64)>> {
    match rule {
        PsiRule::Midpoint => Ok(vec![(0.5, 1.0)]),
        PsiRule::GaussLegendre(n) => {
            if n == 0 {
                return Err(Error::InvalidArgument(
                    "need at least one node per step".into(),
                ));
            }
            let (x, w) = quadrature::gauss_jacobi(n, 0.0)?;
            Ok(x.iter()
                .zip(&w)
                .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
                .collect())
        }
    }
}

/// Cost functional on flat `m × d` control arrays.
struct Objective<'a> {
    m: usize,
    d: usize,
    nu: &'a [f64],
    q: f64,
    nodes: Vec<(f64, f64)>,
}

const LOG_FLOOR: f64 = 1e-300;

impl Objective<'_> {
    fn reference(&self, prefix: &[f64], eta: &[f64], i: usize, tau: f64, out: &mut [f64]) {
        // ψ at time (i + τ)/m (0-based step i): (prefix + τ η_i)/(i + τ)
        let denom = i as f64 + tau;
        for k in 0..self.d {
            let psi = (prefix[k] + tau * eta[k]) / denom;
            out[k] = self.q * psi + (1.0 - self.q) * self.nu[k];
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let mut prefix = vec![0.0; d];
        let mut mu = vec![0.0; d];
        let mut total = 0.0;
        for i in 0..self.m {
            let eta = &x[i * d..(i + 1) * d];
            for &(tau, w) in &self.nodes {
                self.reference(&prefix, eta, i, tau, &mut mu);
                let mut h = 0.0;
                for k in 0..d {
                    if eta[k] > 0.0 {
                        h += eta[k] * (eta[k] / mu[k]).ln();
                    }
                }
                total += w * h;
            }
            for k in 0..d {
                prefix[k] += eta[k];
            }
        }
        total / self.m as f64
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (m, d) = (self.m, self.d);
        let mut grad = vec![0.0; m * d];
        // ratio[i][node][k] = η_ik / μ_{i,node,k}
        let mut prefix = vec![0.0; d];
        let mut mu = vec![0.0; d];
        let mut later = vec![0.0; m * d];
        for i in 0..m {
            let eta = &x[i * d..(i + 1) * d];
            for &(tau, w) in &self.nodes {
                self.reference(&prefix, eta, i, tau, &mut mu);
                let denom = i as f64 + tau;
                for k in 0..d {
                    let e = eta[k].max(LOG_FLOOR);
                    let ratio = eta[k] / mu[k];
                    grad[i * d + k] += w * ((e / mu[k]).ln() + 1.0 - self.q * ratio * tau / denom);
                    later[i * d + k] += w * ratio / denom;
                }
            }
            for k in 0..d {
                prefix[k] += eta[k];
            }
        }
        // steps after j feel η_j through ψ with coefficient q/(i + τ)
        let mut suffix = vec![0.0; d];
        for j in (0..m).rev() {
            for k in 0..d {
                grad[j * d + k] -= self.q * suffix[k];
                suffix[k] += later[j * d + k];
            }
        }
        for g in grad.iter_mut() {
            *g /= m as f64;
        }
        grad
    }
}

/// Cost of a piecewise-constant control under the midpoint rule.
pub fn control_objective(path: &ControlPath, nu: &OffspringLaw, q: f64) -> Result<ExtReal> {
    control_objective_with(path, nu, q, PsiRule::Midpoint)
}

pub fn control_objective_with(
    path: &ControlPath,
    nu: &OffspringLaw,
    q: f64,
    rule: PsiRule,
) -> Result<ExtReal> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )));
    }
    let nu = nu.on_support(path.support())?;
    let obj = Objective {
        m: path.steps(),
        d: path.support().len(),
        nu: nu.weights(),
        q,
        nodes: step_nodes(rule)?,
    };
    ExtReal::new(obj.value(&path.flat()))
}

/// Settings of the penalized path optimizer.
#[derive(Debug, Clone)]
pub struct ControlOptions {
    pub rule: PsiRule,
    /// Penalty weights on `‖mean(η) − ρ‖²`, applied in order.
    pub penalties: Vec<f64>,
    pub max_inner_iterations: usize,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            rule: PsiRule::Midpoint,
            penalties: vec![1e1, 1e2, 1e3, 1e4, 1e5, 1e6],
            max_inner_iterations: 4000,
        }
    }
}

/// Outcome of [`rate_by_control`].
#[derive(Debug, Clone)]
pub struct ControlSolution {
    /// Best cost found; never above `constant_value`.
    pub value: f64,
    pub path: ControlPath,
    /// Cost of the constant control `η ≡ ρ`, i.e. `H(ρ | qρ + (1−q)ν)`.
    pub constant_value: f64,
    /// Cost of the best path per restart (restart 0 starts from the constant path).
    pub restart_values: Vec<f64>,
}

/// Upper approximation of the rate of `ρ` by optimizing over `m`-step controls.
pub fn rate_by_control(
    rho: &ProbVector,
    nu: &OffspringLaw,
    q: f64,
    m: usize,
    restarts: usize,
    seed: u64,
) -> Result<ControlSolution> {
    rate_by_control_with(rho, nu, q, m, restarts, seed, &ControlOptions::default())
}

pub fn rate_by_control_with(
    rho: &ProbVector,
    nu: &OffspringLaw,
    q: f64,
    m: usize,
    restarts: usize,
    seed: u64,
    options: &ControlOptions,
) -> Result<ControlSolution> {
    if m < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 steps, got {m}"
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )));
    }
    let nu_on = nu.on_support(rho.support())?;
    let d = rho.len();
    let obj = Objective {
        m,
        d,
        nu: nu_on.weights(),
        q,
        nodes: step_nodes(options.rule)?,
    };
    let constant = ControlPath::constant(rho, m)?;
    let constant_value = obj.value(&constant.flat());
    let target = rho.weights();
    let stream = RngStream::new(seed, 0xc0_7701);

    let runs: Vec<(f64, Vec<f64>)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let start = initial_path(target, m, r, stream.split(r as u64));
            let x = optimize_path(&obj, target, start, options);
            (obj.value(&x), x)
        })
        .collect();

    let restart_values: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let (value, flat) = runs
        .into_iter()
        .filter(|r| r.0.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|best| best.0 < constant_value)
        .unwrap_or((constant_value, constant.flat()));
    Ok(ControlSolution {
        value,
        path: ControlPath::from_flat(rho.support(), &flat)?,
        constant_value,
        restart_values,
    })
}

fn initial_path(target: &[f64], m: usize, restart: usize, stream: RngStream) -> Vec<f64> {
    let d = target.len();
    let mut x: Vec<f64> = (0..m).flat_map(|_| target.iter().copied()).collect();
    if restart == 0 {
        return x;
    }
    let mut rng = stream.rng();
    let eps = 0.05 + 0.45 * rng.uniform();
    for row in x.chunks_mut(d) {
        // Dirichlet(1, …, 1) via normalized exponentials
        let e: Vec<f64> = (0..d).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let s: f64 = e.iter().sum();
        for (v, ei) in row.iter_mut().zip(&e) {
            *v = (1.0 - eps) * *v + eps * ei / s;
        }
    }
    repair(&mut x, target);
    x
}

/// Alternating projections between the product of simplices and the mean constraint.
fn repair(x: &mut [f64], target: &[f64]) {
    let d = target.len();
    let m = x.len() / d;
    for _ in 0..10_000 {
        let mut mean = vec![0.0; d];
        for row in x.chunks(d) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v / m as f64;
            }
        }
        let gap = mean
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap < 1e-14 {
            return;
        }
        for row in x.chunks_mut(d) {
            let shifted: Vec<f64> = row
                .iter()
                .zip(mean.iter().zip(target))
                .map(|(v, (a, b))| v + b - a)
                .collect();
            row.copy_from_slice(&rate::project_simplex(&shifted));
        }
    }
}

fn project_rows(x: &mut [f64], d: usize) {
    for row in x.chunks_mut(d) {
        let p = rate::project_simplex(row);
        row.copy_from_slice(&p);
    }
}

/// Penalty continuation with spectral projected gradient in each stage,
/// followed by an exact feasibility repair.
fn optimize_path(
    obj: &Objective,
    target: &[f64],
    mut x: Vec<f64>,
    options: &ControlOptions,
) -> Vec<f64> {
    let d = obj.d;
    let m = obj.m as f64;
    for &beta in &options.penalties {
        let penalized = |x: &[f64]| -> f64 {
            let mut mean = vec![0.0; d];
            for row in x.chunks(d) {
                for (a, v) in mean.iter_mut().zip(row) {
                    *a += v / m;
                }
            }
            let pen: f64 = mean
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            obj.value(x) + beta * pen
        };
        let penalized_grad = |x: &[f64]| -> Vec<f64> {
            let mut mean = vec![0.0; d];
            for row in x.chunks(d) {
                for (a, v) in mean.iter_mut().zip(row) {
                    *a += v / m;
                }
            }
            let mut g = obj.gradient(x);
            for row in g.chunks_mut(d) {
                for k in 0..d {
                    row[k] += 2.0 * beta * (mean[k] - target[k]) / m;
                }
            }
            g
        };
        x = spectral_projected_gradient(
            &penalized,
            &penalized_grad,
            x,
            d,
            options.max_inner_iterations,
        );
    }
    repair(&mut x, target);
    x
}

/// Projected gradient over a product of simplices with Barzilai–Borwein
/// steps and a non-monotone Armijo test.
fn spectral_projected_gradient<F, G>(
    f: &F,
    grad: &G,
    mut x: Vec<f64>,
    d: usize,
    max_iter: usize,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    const MEMORY: usize = 10;
    project_rows(&mut x, d);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut history = vec![fx];
    let mut step = 1.0;
    for _ in 0..max_iter {
        let mut trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        project_rows(&mut trial, d);
        let dir: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let pg: f64 = dir.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if pg < 1e-13 {
            break;
        }
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let fref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let fc = f(&cand);
            if fc <= fref + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = grad(&xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            1e4
        };
        x = xn;
        g = gn;
        fx = fnew;
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
    }
    x
}

/// Cost of the two-phase control `ρ_ε` on `[0, 1/2]`, `ρ_{−ε}` on `(1/2, 1]`,
/// where `ρ_x = ρ + x(ρ − ν)`, discretized on 1024 steps.
pub fn two_phase_probe(rho: &ProbVector, nu: &OffspringLaw, q: f64, eps: f64) -> Result<f64> {
    const STEPS: usize = 1024;
    let nu_on = nu.on_support(rho.support())?;
    let shifted = |x: f64| -> Result<ProbVector> {
        let w: Vec<f64> = rho
            .weights()
            .iter()
            .zip(nu_on.weights())
            .map(|(r, n)| r + x * (r - n))
            .collect();
        if w.iter().any(|v| *v < 0.0) {
            return Err(Error::Infeasible(format!(
                "ρ ± {eps}(ρ − ν) leaves the simplex"
            )));
        }
        ProbVector::new(rho.support().to_vec(), w)
    };
    let first = shifted(eps)?;
    let second = shifted(-eps)?;
    let mut controls = vec![first; STEPS / 2];
    controls.extend(std::iter::repeat_n(second, STEPS / 2));
    Ok(control_objective(&ControlPath::new(controls)?, nu, q)?.get())
}

/// `H(ρ | qρ + (1−q)ν)`, the cost of the constant control.
pub fn constant_control_bound(rho: &ProbVector, nu: &OffspringLaw, q: f64) -> Result<ExtReal> {
    let nu_on = nu.on_support(rho.support())?;
    measures::relative_entropy(rho, &measures::mix(q, rho, &nu_on)?)
}
