//! The reinforced urn sequence and the estimators built on it.
//!
//! `ξ_1 ~ ν`; afterwards, with probability `q` a uniformly chosen earlier
//! ball is copied and with probability `1 − q` a fresh `ν`-sample is added.
//! Along a lineage of the reinforced tree the out-degrees follow the same
//! rule, which is what the many-to-one estimator and the enumeration use.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, OffspringLaw, ProbVector};
use crate::simulate::rng::{CounterRng, RngStream};
use crate::simulate::tree::{replica_moments, MeanEstimate};

/// Largest number of sequences [`enumerate_expected_counts`] will visit.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

fn check_q_open(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )));
    }
    Ok(())
}

/// One urn step given the counts so far (`drawn` balls in total).
#[inline]
fn urn_step(rng: &mut CounterRng, nu: &[f64], q: f64, counts: &[u64], drawn: u64) -> usize {
    if drawn > 0 && q > 0.0 && rng.uniform() < q {
        rng.categorical_counts(counts, drawn)
    } else {
        rng.categorical(nu)
    }
}

/// Runs the urn for `n` steps; returns the colour sequence and `L_n`.
pub fn simulate_urn(
    nu: &OffspringLaw,
    q: f64,
    n: u64,
    rng: RngStream,
) -> Result<(Vec<u32>, EmpiricalMeasure)> {
    check_q_open(q)?;
    let support = nu.support();
    let mut counts = vec![0u64; support.len()];
    let mut seq = Vec::with_capacity(n as usize);
    let mut r = rng.rng();
    for i in 0..n {
        let j = urn_step(&mut r, nu.weights(), q, &counts, i);
        counts[j] += 1;
        seq.push(support[j]);
    }
    Ok((seq, EmpiricalMeasure::new(support.to_vec(), counts)?))
}

/// Unbiased estimate of `E_q[#{v : |v| = n, μ_v ∈ target}]`.
///
/// Each replica runs the reinforced sequence for `n` steps (stopping at the
/// first 0) and contributes `∏ ξ_i · 1{L_n ∈ target}`.
pub fn many_to_one_estimate<F>(
    nu: &OffspringLaw,
    q: f64,
    n: u32,
    replicas: u64,
    target: F,
    rng: RngStream,
) -> Result<MeanEstimate>
where
    F: Fn(&ProbVector) -> bool + Sync,
{
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside [0, 1)"
        )));
    }
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidArgument(
            "need n ≥ 1 and at least one replica".into(),
        ));
    }
    let support = nu.support();
    let d = support.len();
    let (s, s2) = replica_moments(replicas, |rep| {
        let mut r = rng.split(rep).rng();
        let mut counts = vec![0u64; d];
        let mut weight = 1.0;
        for i in 0..n as u64 {
            let j = urn_step(&mut r, nu.weights(), q, &counts, i);
            if support[j] == 0 {
                return Ok(0.0);
            }
            counts[j] += 1;
            weight *= support[j] as f64;
        }
        let masses: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let l = ProbVector::from_masses(support.to_vec(), &masses)?;
        Ok(if target(&l) { weight } else { 0.0 })
    })?;
    Ok(MeanEstimate::from_moments(s, s2, replicas))
}

/// Exact expected number of generation-`n` vertices per lineage histogram,
/// by visiting every degree sequence in `S^n`.
pub fn enumerate_expected_counts(
    nu: &OffspringLaw,
    q: f64,
    n: u32,
) -> Result<BTreeMap<Vec<u32>, f64>> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside [0, 1)"
        )));
    }
    let size = (nu.len() as u128).checked_pow(n).unwrap_or(u128::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut out = BTreeMap::new();
    let mut counts = vec![0u32; nu.len()];
    visit(nu, q, n, 0, 1.0, 1.0, &mut counts, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn visit(
    nu: &OffspringLaw,
    q: f64,
    n: u32,
    depth: u32,
    prob: f64,
    weight: f64,
    counts: &mut Vec<u32>,
    out: &mut BTreeMap<Vec<u32>, f64>,
) {
    if depth == n {
        *out.entry(counts.clone()).or_insert(0.0) += prob * weight;
        return;
    }
    for (j, (&k, &p)) in nu.support().iter().zip(nu.weights()).enumerate() {
        let step = if depth == 0 {
            p
        } else {
            q * counts[j] as f64 / depth as f64 + (1.0 - q) * p
        };
        counts[j] += 1;
        // after a 0 the lineage is dead: the weight is 0 from here on
        visit(
            nu,
            q,
            n,
            depth + 1,
            prob * step,
            weight * k as f64,
            counts,
            out,
        );
        counts[j] -= 1;
    }
}

/// Exact law of the urn's count vector after `n` steps, by dynamic
/// programming over count vectors.
pub fn exact_empirical_law(nu: &OffspringLaw, q: f64, n: u32) -> Result<BTreeMap<Vec<u32>, f64>> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside [0, 1)"
        )));
    }
    let d = nu.len();
    let mut layer: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    layer.insert(vec![0; d], 1.0);
    for i in 0..n {
        let mut next = BTreeMap::new();
        for (key, p) in &layer {
            for (j, &w) in nu.weights().iter().enumerate() {
                let step = if i == 0 {
                    w
                } else {
                    q * key[j] as f64 / i as f64 + (1.0 - q) * w
                };
                let mut child = key.clone();
                child[j] += 1;
                *next.entry(child).or_insert(0.0) += p * step;
            }
        }
        layer = next;
        let size = layer.len() as u128;
        if size > ENUMERATION_LIMIT {
            return Err(Error::SizeGuard {
                size,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(layer)
}

/// Rejection-sampled conditional mean of `L_n` given `⟨L_n, w⟩ ≥ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsEstimate {
    pub mean: ProbVector,
    pub accepted: u64,
    pub proposals: u64,
    pub acceptance_rate: f64,
}

/// Runs `replicas` urn sequences of length `n` and averages `L_n` over those
/// landing in `{ρ : ⟨ρ, w⟩ ≥ c}`.
pub fn gibbs_conditional_estimate(
    nu: &OffspringLaw,
    q: f64,
    n: u32,
    w: &[f64],
    c: f64,
    replicas: u64,
    rng: RngStream,
) -> Result<GibbsEstimate> {
    check_q_open(q)?;
    if w.len() != nu.len() {
        return Err(Error::InvalidArgument(
            "half-space normal must match the support".into(),
        ));
    }
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidArgument(
            "need n ≥ 1 and at least one replica".into(),
        ));
    }
    let d = nu.len();
    const CHUNK: u64 = 1024;
    let partial: Vec<(Vec<u64>, u64)> = (0..replicas.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ch| {
            let mut sum = vec![0u64; d];
            let mut acc = 0u64;
            for rep in ch * CHUNK..((ch + 1) * CHUNK).min(replicas) {
                let mut r = rng.split(rep).rng();
                let mut counts = vec![0u64; d];
                for i in 0..n as u64 {
                    let j = urn_step(&mut r, nu.weights(), q, &counts, i);
                    counts[j] += 1;
                }
                let score: f64 = counts
                    .iter()
                    .zip(w)
                    .map(|(&k, wi)| k as f64 * wi)
                    .sum::<f64>()
                    / n as f64;
                if score >= c {
                    acc += 1;
                    for (s, k) in sum.iter_mut().zip(&counts) {
                        *s += k;
                    }
                }
            }
            (sum, acc)
        })
        .collect();
    let mut sum = vec![0u64; d];
    let mut accepted = 0;
    for (s, a) in partial {
        accepted += a;
        for (t, x) in sum.iter_mut().zip(s) {
            *t += x;
        }
    }
    if accepted == 0 {
        return Err(Error::Statistical(format!(
            "no proposal out of {replicas} landed in the half-space"
        )));
    }
    let masses: Vec<f64> = sum.iter().map(|&x| x as f64).collect();
    Ok(GibbsEstimate {
        mean: ProbVector::from_masses(nu.support().to_vec(), &masses)?,
        accepted,
        proposals: replicas,
        acceptance_rate: accepted as f64 / replicas as f64,
    })
}

/// Exact conditional mean of `L_n` given `⟨L_n, w⟩ ≥ c`, from [`exact_empirical_law`].
pub fn exact_conditional_mean(
    nu: &OffspringLaw,
    q: f64,
    n: u32,
    w: &[f64],
    c: f64,
) -> Result<(ProbVector, f64)> {
    let law = exact_empirical_law(nu, q, n)?;
    let mut mass = 0.0;
    let mut acc = vec![0.0; nu.len()];
    for (key, p) in &law {
        let score: f64 = key.iter().zip(w).map(|(&k, wi)| k as f64 * wi).sum::<f64>() / n as f64;
        if score >= c {
            mass += p;
            for (a, &k) in acc.iter_mut().zip(key) {
                *a += p * k as f64;
            }
        }
    }
    if mass == 0.0 {
        return Err(Error::Infeasible("half-space has zero probability".into()));
    }
    Ok((ProbVector::from_masses(nu.support().to_vec(), &acc)?, mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures;
    use crate::simulate::tree::{rgw_campaign, DEFAULT_POP_CAP};
    use approx::assert_abs_diff_eq;

    fn flagship() -> OffspringLaw {
        OffspringLaw::uniform(vec![1, 2]).unwrap()
    }

    #[test]
    fn urn_marginals_and_two_step_law() {
        let nu = OffspringLaw::new(vec![1, 2, 4], vec![0.2, 0.5, 0.3]).unwrap();
        let q = 0.4;
        let runs = 40_000u64;
        let mut first = [0u64; 3];
        let mut pair = [[0u64; 3]; 3];
        let mut tenth = [0u64; 3];
        for r in 0..runs {
            let (seq, _) = simulate_urn(&nu, q, 10, RngStream::new(17, r)).unwrap();
            let idx = |k: u32| nu.support().iter().position(|&s| s == k).unwrap();
            first[idx(seq[0])] += 1;
            pair[idx(seq[0])][idx(seq[1])] += 1;
            tenth[idx(seq[9])] += 1;
        }
        for k in 0..3 {
            let p = nu.weights()[k];
            let se = (p * (1.0 - p) / runs as f64).sqrt();
            assert!((first[k] as f64 / runs as f64 - p).abs() < 4.0 * se);
            assert!((tenth[k] as f64 / runs as f64 - p).abs() < 4.0 * se);
            let row: u64 = pair[k].iter().sum();
            for (j, &count) in pair[k].iter().enumerate() {
                let expect = q * (k == j) as u8 as f64 + (1.0 - q) * nu.weights()[j];
                let se = (expect * (1.0 - expect) / row as f64).sqrt();
                assert!((count as f64 / row as f64 - expect).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn enumeration_small_cases() {
        let nu = flagship();
        let one = enumerate_expected_counts(&nu, 1.0 / 3.0, 1).unwrap();
        assert_abs_diff_eq!(one[&vec![1, 0]], 0.5);
        assert_abs_diff_eq!(one[&vec![0, 1]], 1.0);
        let two = enumerate_expected_counts(&nu, 1.0 / 3.0, 2).unwrap();
        assert_abs_diff_eq!(two[&vec![0, 2]], 4.0 / 3.0, epsilon = 1e-15);
        // E Z_2 = Λ-free check at q = 0: m²
        let total: f64 = enumerate_expected_counts(&nu, 0.0, 5)
            .unwrap()
            .values()
            .sum();
        assert_abs_diff_eq!(total, 1.5f64.powi(5), epsilon = 1e-12);
        assert!(matches!(
            enumerate_expected_counts(&nu, 0.5, 30),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn exact_law_matches_enumeration() {
        let nu = OffspringLaw::new(vec![0, 1, 3], vec![0.25, 0.25, 0.5]).unwrap();
        let q = 0.6;
        let law = exact_empirical_law(&nu, q, 6).unwrap();
        assert_abs_diff_eq!(law.values().sum::<f64>(), 1.0, epsilon = 1e-14);
        let counts = enumerate_expected_counts(&nu, q, 6).unwrap();
        for (key, p) in &law {
            let weight: f64 = key
                .iter()
                .zip(nu.support())
                .map(|(&c, &k)| (k as f64).powi(c as i32))
                .product();
            assert_abs_diff_eq!(counts[key], p * weight, epsilon = 1e-12);
        }
    }

    #[test]
    fn many_to_one_first_generation() {
        let nu = OffspringLaw::new(vec![0, 1, 3], vec![0.2, 0.3, 0.5]).unwrap();
        let est =
            many_to_one_estimate(&nu, 0.3, 1, 50_000, |_| true, RngStream::new(1, 1)).unwrap();
        assert!(est.within(nu.mean(), 3.0), "{est:?}");
    }

    #[test]
    fn triangulation_small_n() {
        let nu = flagship();
        for q in [0.0, 1.0 / 3.0] {
            let n = 4;
            let exact: f64 = enumerate_expected_counts(&nu, q, n).unwrap().values().sum();
            let mto =
                many_to_one_estimate(&nu, q, n, 40_000, |_| true, RngStream::new(2, 0)).unwrap();
            let sim =
                rgw_campaign(&nu, q, n, 40_000, DEFAULT_POP_CAP, RngStream::new(2, 1)).unwrap();
            assert!(mto.within(exact, 3.0), "q={q}: {mto:?} vs {exact}");
            assert!(
                sim.population.within(exact, 3.0),
                "q={q}: {sim:?} vs {exact}"
            );
        }
    }

    #[test]
    fn many_to_one_with_target_matches_enumeration() {
        let nu = flagship();
        let q = 1.0 / 3.0;
        let n = 6;
        let target = |r: &ProbVector| r.weights()[1] >= 0.5;
        let exact: f64 = enumerate_expected_counts(&nu, q, n)
            .unwrap()
            .iter()
            .filter(|(k, _)| 2 * k[1] >= n)
            .map(|(_, v)| v)
            .sum();
        let est = many_to_one_estimate(&nu, q, n, 40_000, target, RngStream::new(4, 4)).unwrap();
        assert!(est.within(exact, 3.0));
    }

    #[test]
    fn gibbs_estimates() {
        let nu = flagship();
        let q = 1.0 / 3.0;
        // n = 1: accepted iff ξ_1 = 2
        let g = gibbs_conditional_estimate(&nu, q, 1, &[0.0, 1.0], 0.5, 2000, RngStream::new(0, 1))
            .unwrap();
        assert_eq!(g.mean.weights(), &[0.0, 1.0]);
        assert!((g.acceptance_rate - 0.5).abs() < 0.05);
        // typical event
        let g =
            gibbs_conditional_estimate(&nu, q, 200, &[0.0, 1.0], 0.0, 10_000, RngStream::new(0, 2))
                .unwrap();
        assert!(measures::linf_distance(&g.mean, nu.as_prob()).unwrap() < 0.02);
        // moderate deviation at small n versus the exact conditional law
        let (exact, mass) = exact_conditional_mean(&nu, q, 20, &[0.0, 1.0], 0.7).unwrap();
        let g =
            gibbs_conditional_estimate(&nu, q, 20, &[0.0, 1.0], 0.7, 100_000, RngStream::new(0, 3))
                .unwrap();
        assert!((g.acceptance_rate - mass).abs() < 4.0 * (mass * (1.0 - mass) / 1e5).sqrt());
        assert!(measures::linf_distance(&g.mean, &exact).unwrap() < 0.005);
        assert!(matches!(
            gibbs_conditional_estimate(&nu, q, 5, &[0.0, 1.0], 1.5, 100, RngStream::new(0, 4)),
            Err(Error::Statistical(_))
        ));
    }
}
