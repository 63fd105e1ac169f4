//! The ★-coloured urn describing the spine under a change of measure, and
//! its mean replacement matrix.
//!
//! A ball of colour `k ∈ S` has activity `q a(k)`; the special colour ★ has
//! activity `(1−q) Σ_j a(j) ν(j)`. Drawing colour `j` adds a `j` and a ★;
//! drawing ★ adds a ★ and a colour `k` chosen with probability `∝ a(k) ν(k)`.
//! Under `Σ_j ν(j)/(1 − q a(j)) = 1/(1 − q)` the non-★ frequencies converge to
//! `π_a(k) = (1−q) a(k) ν(k) / (1 − q a(k))`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measures::{OffspringLaw, ProbVector};
use crate::simulate::rng::RngStream;

/// Tolerance on the constraint for simulation.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-9;

/// `Σ_j ν(j)/(1 − q a(j)) − 1/(1 − q)`.
pub fn constraint_residual(a: &[f64], nu: &OffspringLaw, q: f64) -> f64 {
    let s: f64 = nu
        .weights()
        .iter()
        .zip(a)
        .map(|(n, x)| n / (1.0 - q * x))
        .sum();
    s - 1.0 / (1.0 - q)
}

/// Range checks shared by every consumer of `a`: one entry per atom,
/// `a ∈ [0, 1/q)` and `a(0) = 0`.
pub fn check_activity(a: &[f64], nu: &OffspringLaw, q: f64) -> Result<()> {
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
    for (&k, &x) in nu.support().iter().zip(a) {
        if !(x >= 0.0 && x * q < 1.0) {
            return Err(Error::Precondition(format!(
                "a({k}) = {x} outside [0, 1/q)"
            )));
        }
        if k == 0 && x != 0.0 {
            return Err(Error::Precondition("a(0) must be 0".into()));
        }
    }
    Ok(())
}

/// Ball counts and activities of the ★-urn.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineUrnState {
    /// Balls per colour of the support.
    pub counts: Vec<u64>,
    pub star_count: u64,
    /// `q a(k)` per colour.
    pub activities: Vec<f64>,
    pub star_activity: f64,
}

impl SpineUrnState {
    pub fn total_balls(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.star_count
    }
}

/// Runs the ★-urn for `n` draws; returns the frequencies of the non-★ balls
/// added and the final state.
pub fn simulate_spine_urn(
    nu: &OffspringLaw,
    q: f64,
    a: &[f64],
    n: u64,
    rng: RngStream,
) -> Result<(ProbVector, SpineUrnState)> {
    check_activity(a, nu, q)?;
    let residual = constraint_residual(a, nu, q);
    if residual.abs() > CONSTRAINT_TOLERANCE {
        return Err(Error::Precondition(format!(
            "activity vector violates the urn constraint by {residual:e}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let d = nu.len();
    let activities: Vec<f64> = a.iter().map(|x| q * x).collect();
    let star_weights: Vec<f64> = a.iter().zip(nu.weights()).map(|(x, p)| x * p).collect();
    let star_activity = (1.0 - q) * star_weights.iter().sum::<f64>();
    let mut r = rng.rng();
    let mut state = SpineUrnState {
        counts: vec![0; d],
        star_count: 1,
        activities,
        star_activity,
    };
    state.counts[r.categorical(nu.weights())] += 1;
    let mut added = vec![0u64; d];
    // cumulative activity per colour, kept in sync with the counts
    let mut weights: Vec<f64> = (0..=d)
        .map(|j| {
            if j < d {
                state.counts[j] as f64 * state.activities[j]
            } else {
                state.star_activity
            }
        })
        .collect();
    for _ in 0..n {
        let j = r.categorical(&weights);
        let new = if j < d {
            j
        } else {
            r.categorical(&star_weights)
        };
        state.counts[new] += 1;
        state.star_count += 1;
        added[new] += 1;
        weights[new] = state.counts[new] as f64 * state.activities[new];
        weights[d] = state.star_count as f64 * state.star_activity;
    }
    let masses: Vec<f64> = added.iter().map(|&x| x as f64).collect();
    Ok((
        ProbVector::from_masses(nu.support().to_vec(), &masses)?,
        state,
    ))
}

/// `π_a(k) = (1−q) a(k) ν(k) / (1 − q a(k))`, unnormalized.
pub fn pi_weights(a: &[f64], nu: &OffspringLaw, q: f64) -> Vec<f64> {
    a.iter()
        .zip(nu.weights())
        .map(|(x, p)| (1.0 - q) * x * p / (1.0 - q * x))
        .collect()
}

/// Mean replacement matrix with its Perron data.
#[derive(Debug, Clone)]
pub struct ReplacementReport {
    /// Colours indexing rows and columns (`None` is ★), atoms with `k > 0` first.
    pub labels: Vec<Option<u32>>,
    pub matrix: DMatrix<f64>,
    pub eigenvalue: f64,
    /// Left eigenvector restricted to the support, normalized to sum 1.
    pub eigenvector_on_support: ProbVector,
    pub constraint_residual: f64,
    pub iterations: usize,
}

/// Builds `A` over `(S ∖ {0}) ∪ {★}` and finds its leading eigenvalue and
/// left eigenvector by power iteration. The constraint is reported, not
/// enforced, so inadmissible vectors can serve as controls.
pub fn replacement_matrix(nu: &OffspringLaw, q: f64, a: &[f64]) -> Result<ReplacementReport> {
    check_activity(a, nu, q)?;
    let atoms: Vec<usize> = (0..nu.len()).filter(|&i| nu.support()[i] > 0).collect();
    if atoms.is_empty() {
        return Err(Error::DegenerateLaw("no positive atom".into()));
    }
    let dim = atoms.len() + 1;
    let star = atoms.len();
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (r, &i) in atoms.iter().enumerate() {
        m[(r, r)] = q * a[i];
        m[(r, star)] = q * a[i];
        m[(star, r)] = (1.0 - q) * a[i] * nu.weights()[i];
    }
    m[(star, star)] = (1.0 - q) * atoms.iter().map(|&i| a[i] * nu.weights()[i]).sum::<f64>();

    const MAX_ITER: usize = 1_000_000;
    const TOL: f64 = 1e-15;
    let mut v = DMatrix::<f64>::from_element(1, dim, 1.0 / dim as f64);
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let w = &v * &m;
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(Error::PowerIteration { iterations, change });
        }
        let w = w / s;
        change = (&w - &v).iter().map(|x| x.abs()).fold(0.0, f64::max);
        v = w;
        if change < TOL {
            break;
        }
    }
    if change >= 1e-13 {
        return Err(Error::PowerIteration { iterations, change });
    }
    // Rayleigh-type refinement with the converged vector
    let w = &v * &m;
    let eigenvalue = w.iter().sum::<f64>() / v.iter().sum::<f64>();
    let mut on_support = vec![0.0; nu.len()];
    for (r, &i) in atoms.iter().enumerate() {
        on_support[i] = v[(0, r)];
    }
    let mut labels: Vec<Option<u32>> = atoms.iter().map(|&i| Some(nu.support()[i])).collect();
    labels.push(None);
    Ok(ReplacementReport {
        labels,
        matrix: m,
        eigenvalue,
        eigenvector_on_support: ProbVector::from_masses(nu.support().to_vec(), &on_support)?,
        constraint_residual: constraint_residual(a, nu, q),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures;
    use approx::assert_abs_diff_eq;

    fn flagship() -> OffspringLaw {
        OffspringLaw::uniform(vec![1, 2]).unwrap()
    }

    #[test]
    fn constant_activity() {
        let nu = flagship();
        let q = 1.0 / 3.0;
        assert_abs_diff_eq!(
            constraint_residual(&[1.0, 1.0], &nu, q),
            0.0,
            epsilon = 1e-15
        );
        let rep = replacement_matrix(&nu, q, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(rep.eigenvalue, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            rep.eigenvector_on_support.weights()[0],
            0.5,
            epsilon = 1e-12
        );
        let (freq, state) =
            simulate_spine_urn(&nu, q, &[1.0, 1.0], 200_000, RngStream::new(1, 0)).unwrap();
        assert_eq!(state.total_balls(), 2 + 2 * 200_000);
        assert!(measures::linf_distance(&freq, nu.as_prob()).unwrap() < 0.01);
    }

    #[test]
    fn flagship_activity_and_zero_atom() {
        let nu = flagship();
        let q = 1.0 / 3.0;
        let a = [0.5, 4.0 / 3.0];
        let pi = ProbVector::from_masses(vec![1, 2], &pi_weights(&a, &nu, q)).unwrap();
        assert_abs_diff_eq!(pi.weights()[0], 0.2, epsilon = 1e-12);
        let rep = replacement_matrix(&nu, q, &a).unwrap();
        assert_abs_diff_eq!(rep.eigenvalue, 1.0, epsilon = 1e-10);
        assert!(measures::linf_distance(&rep.eigenvector_on_support, &pi).unwrap() < 1e-8);

        let nu0 = OffspringLaw::new(vec![0, 1, 2], vec![0.2, 0.3, 0.5]).unwrap();
        // a(1) = 1 and solve for a(2)
        let q = 0.5;
        let rest = 1.0 / (1.0 - q) - 0.2 - 0.3 / (1.0 - q);
        let a2 = (1.0 - 0.5 / rest) / q;
        let a = [0.0, 1.0, a2];
        assert!(constraint_residual(&a, &nu0, q).abs() < 1e-14);
        let rep = replacement_matrix(&nu0, q, &a).unwrap();
        assert_eq!(rep.labels, vec![Some(1), Some(2), None]);
        assert_abs_diff_eq!(rep.eigenvalue, 1.0, epsilon = 1e-10);
        let pi = ProbVector::from_masses(vec![0, 1, 2], &pi_weights(&a, &nu0, q)).unwrap();
        assert!(measures::linf_distance(&rep.eigenvector_on_support, &pi).unwrap() < 1e-8);
    }

    #[test]
    fn inadmissible_activity() {
        let nu = flagship();
        let q = 1.0 / 3.0;
        let a = [1.3, 1.3];
        assert!(constraint_residual(&a, &nu, q).abs() > 0.1);
        let rep = replacement_matrix(&nu, q, &a).unwrap();
        assert!((rep.eigenvalue - 1.0).abs() > 0.05);
        assert!(matches!(
            simulate_spine_urn(&nu, q, &a, 10, RngStream::new(0, 0)),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            check_activity(&[3.0, 1.0], &nu, q),
            Err(Error::Precondition(_))
        ));
        let nu0 = OffspringLaw::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        assert!(check_activity(&[0.1, 1.0], &nu0, q).is_err());
    }
}
