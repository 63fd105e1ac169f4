//! Generation-by-generation simulation of reinforced Galton–Watson trees and
//! of the two-type benchmark tree.
//!
//! No tree is stored. An individual only needs its ancestral out-degree
//! counts, and individuals sharing the same counts are exchangeable, so a
//! generation is a map from count vector to multiplicity. The members of the
//! group with rank `g` in generation `n` draw from the substream `(n, g)`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, OffspringLaw};
use crate::simulate::rng::{CounterRng, RngStream};

/// Default cap on the size of a single generation.
pub const DEFAULT_POP_CAP: u64 = 10_000_000;

/// Histogram of lineage count vectors (indexed like the support) to multiplicities.
pub type Histogram = BTreeMap<Vec<u32>, u64>;

/// The ancestral out-degree counts of one individual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageState {
    pub counts: EmpiricalMeasure,
    pub generation: u32,
}

/// Snapshot of one generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationReport {
    pub generation: u32,
    pub population: u64,
    /// Lineage counts keyed by the integer count vector over the support.
    pub histogram: Histogram,
    pub survived: bool,
    /// Set on the last report when the next generation would exceed the cap.
    pub truncated: bool,
}

impl GenerationReport {
    /// Distinct lineage states with their multiplicities.
    pub fn lineages<'a>(
        &'a self,
        support: &'a [u32],
    ) -> impl Iterator<Item = (LineageState, u64)> + 'a {
        self.histogram.iter().map(move |(k, &mult)| {
            let counts = k.iter().map(|&c| c as u64).collect();
            let counts = EmpiricalMeasure::new(support.to_vec(), counts)
                .unwrap_or_else(|_| EmpiricalMeasure::empty(support));
            (
                LineageState {
                    counts,
                    generation: self.generation,
                },
                mult,
            )
        })
    }
}

/// Aggregates histograms over generations after rounding `counts / n` to a
/// grid of mesh `1/mesh`. Generation 0 is skipped.
pub fn binned_histogram(reports: &[GenerationReport], mesh: u32) -> Histogram {
    let mut out = Histogram::new();
    for r in reports.iter().filter(|r| r.generation > 0) {
        for (k, &mult) in &r.histogram {
            let key = k
                .iter()
                .map(|&c| ((c as f64) * mesh as f64 / r.generation as f64).round() as u32)
                .collect();
            *out.entry(key).or_insert(0) += mult;
        }
    }
    out
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Draws an out-degree index for an individual with lineage counts `key`.
#[inline]
fn draw_degree(rng: &mut CounterRng, nu: &[f64], q: f64, key: &[u64], generation: u64) -> usize {
    if generation > 0 && q > 0.0 && rng.uniform() < q {
        rng.categorical_counts(key, generation)
    } else {
        rng.categorical(nu)
    }
}

/// Forward simulation of a reinforced Galton–Watson tree up to generation
/// `n_max`, extinction, or the population cap.
pub fn simulate_rgw(
    nu: &OffspringLaw,
    q: f64,
    n_max: u32,
    pop_cap: u64,
    rng: RngStream,
) -> Result<Vec<GenerationReport>> {
    check_q(q)?;
    if n_max < 1 || pop_cap < 1 {
        return Err(Error::InvalidArgument(
            "n_max and pop_cap must be at least 1".into(),
        ));
    }
    let support = nu.support();
    let d = support.len();
    let mut current = Histogram::new();
    current.insert(vec![0; d], 1);
    let mut reports = vec![GenerationReport {
        generation: 0,
        population: 1,
        histogram: current.clone(),
        survived: true,
        truncated: false,
    }];
    for n in 0..n_max {
        let groups: Vec<(&Vec<u32>, u64)> = current.iter().map(|(k, &m)| (k, m)).collect();
        // members choosing each degree, per group
        let choices: Vec<Vec<u64>> = groups
            .par_iter()
            .enumerate()
            .map(|(g, (key, mult))| {
                let mut rng = rng.substream(&[n as u64, g as u64]).rng();
                let key64: Vec<u64> = key.iter().map(|&c| c as u64).collect();
                let mut chosen = vec![0u64; d];
                for _ in 0..*mult {
                    chosen[draw_degree(&mut rng, nu.weights(), q, &key64, n as u64)] += 1;
                }
                chosen
            })
            .collect();
        let mut next = Histogram::new();
        let mut population: u64 = 0;
        for ((key, _), chosen) in groups.iter().zip(&choices) {
            for (j, &members) in chosen.iter().enumerate() {
                let children = members * support[j] as u64;
                if children == 0 {
                    continue;
                }
                let mut child = (*key).clone();
                child[j] += 1;
                *next.entry(child).or_insert(0) += children;
                population += children;
            }
        }
        if population > pop_cap {
            reports.last_mut().expect("non-empty").truncated = true;
            break;
        }
        debug_assert!(next.keys().all(|k| {
            k.iter().map(|&c| c as u64).sum::<u64>() == n as u64 + 1
                && support.iter().zip(k).all(|(&s, &c)| s > 0 || c == 0)
        }));
        current = next;
        reports.push(GenerationReport {
            generation: n + 1,
            population,
            histogram: current.clone(),
            survived: population > 0,
            truncated: false,
        });
        if population == 0 {
            break;
        }
    }
    Ok(reports)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl MeanEstimate {
    pub fn from_moments(sum: f64, sum_sq: f64, samples: u64) -> Self {
        let n = samples as f64;
        let mean = sum / n;
        let var = if samples > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n).sqrt(),
            samples,
        }
    }

    /// `|mean − target| ≤ k · std_error` (with a tiny absolute slack for zero-variance cases).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + 1e-12 * target.abs().max(1.0)
    }
}

const CHUNK: usize = 1024;

/// Sum of `f(r)` and `f(r)²` over `0..replicas`, reduced in a fixed order so
/// the result does not depend on the number of threads.
pub(crate) fn replica_moments<F>(replicas: u64, f: F) -> Result<(f64, f64)>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let chunks: Vec<u64> = (0..replicas.div_ceil(CHUNK as u64)).collect();
    let partial: Vec<(f64, f64)> = chunks
        .par_iter()
        .map(|&c| {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for r in c * CHUNK as u64..((c + 1) * CHUNK as u64).min(replicas) {
                let x = f(r)?;
                s += x;
                s2 += x * x;
            }
            Ok((s, s2))
        })
        .collect::<Result<_>>()?;
    Ok(partial
        .iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1)))
}

/// Population summary of a replica campaign at generation `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignSummary {
    pub population: MeanEstimate,
    /// Fraction of replicas alive at generation `n` (truncated replicas count as alive).
    pub survival: MeanEstimate,
    pub truncated_replicas: u64,
}

/// Runs `replicas` independent trees (replica `r` uses `stream.split(r)`)
/// and summarizes generation `n`.
pub fn rgw_campaign(
    nu: &OffspringLaw,
    q: f64,
    n: u32,
    replicas: u64,
    pop_cap: u64,
    stream: RngStream,
) -> Result<CampaignSummary> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    let outcomes: Vec<(f64, bool, bool)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let reports = simulate_rgw(nu, q, n, pop_cap, stream.split(r))?;
            let last = reports.last().expect("non-empty");
            let truncated = last.truncated;
            let z = if last.generation == n {
                last.population as f64
            } else {
                0.0
            };
            Ok((
                z,
                truncated || (last.generation == n && last.population > 0),
                truncated,
            ))
        })
        .collect::<Result<_>>()?;
    let (mut s, mut s2, mut alive) = (0.0, 0.0, 0.0);
    let mut truncated_replicas = 0;
    for &(z, a, t) in &outcomes {
        s += z;
        s2 += z * z;
        if a {
            alive += 1.0;
        }
        truncated_replicas += t as u64;
    }
    Ok(CampaignSummary {
        population: MeanEstimate::from_moments(s, s2, replicas),
        survival: MeanEstimate::from_moments(alive, alive, replicas),
        truncated_replicas,
    })
}

/// Per-generation reports of the two-type tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoTypeReport {
    pub type1: GenerationReport,
    pub type2: GenerationReport,
    /// Both types together, lineages over the merged support.
    pub merged: GenerationReport,
}

/// Result of [`simulate_two_type`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTypeRun {
    /// Merged support: `(S + 1) ∪ S'`, the out-degrees a vertex can have.
    pub support: Vec<u32>,
    pub generations: Vec<TwoTypeReport>,
    /// Set when `m_ν > 1 > m_ν'` fails.
    pub assumption_warning: Option<String>,
}

/// Two-type tree: a type-1 individual has `k ~ ν` type-1 children plus one
/// type-2 child; a type-2 individual has `k ~ ν'` type-2 children. Lineage
/// counts record total out-degrees, so type-1 degrees are shifted by one.
pub fn simulate_two_type(
    nu: &OffspringLaw,
    nu_prime: &OffspringLaw,
    n_max: u32,
    pop_cap: u64,
    rng: RngStream,
) -> Result<TwoTypeRun> {
    if n_max < 1 || pop_cap < 1 {
        return Err(Error::InvalidArgument(
            "n_max and pop_cap must be at least 1".into(),
        ));
    }
    let assumption_warning = (!(nu.mean() > 1.0 && nu_prime.mean() < 1.0)).then(|| {
        format!(
            "expected m_nu > 1 > m_nu', got {} and {}",
            nu.mean(),
            nu_prime.mean()
        )
    });
    let mut support: Vec<u32> = nu
        .support()
        .iter()
        .map(|k| k + 1)
        .chain(nu_prime.support().iter().copied())
        .collect();
    support.sort_unstable();
    support.dedup();
    let index = |deg: u32| {
        support
            .binary_search(&deg)
            .expect("degree in merged support")
    };
    let shifted: Vec<usize> = nu.support().iter().map(|&k| index(k + 1)).collect();
    let plain: Vec<usize> = nu_prime.support().iter().map(|&k| index(k)).collect();
    let d = support.len();

    // key: (type, counts)
    let mut current: BTreeMap<(u8, Vec<u32>), u64> = BTreeMap::new();
    current.insert((1, vec![0; d]), 1);
    let snapshot = |gen: u32, pop: &BTreeMap<(u8, Vec<u32>), u64>| -> TwoTypeReport {
        let mut h = [Histogram::new(), Histogram::new(), Histogram::new()];
        for ((t, k), &m) in pop {
            *h[*t as usize - 1].entry(k.clone()).or_insert(0) += m;
            *h[2].entry(k.clone()).or_insert(0) += m;
        }
        let make = |histogram: Histogram| {
            let population = histogram.values().sum();
            GenerationReport {
                generation: gen,
                population,
                histogram,
                survived: population > 0,
                truncated: false,
            }
        };
        let [a, b, c] = h;
        TwoTypeReport {
            type1: make(a),
            type2: make(b),
            merged: make(c),
        }
    };
    let mut generations = vec![snapshot(0, &current)];
    for n in 0..n_max {
        let groups: Vec<(&(u8, Vec<u32>), u64)> = current.iter().map(|(k, &m)| (k, m)).collect();
        let choices: Vec<Vec<u64>> = groups
            .par_iter()
            .enumerate()
            .map(|(g, ((t, _), mult))| {
                let mut rng = rng.substream(&[n as u64, g as u64]).rng();
                let law = if *t == 1 { nu } else { nu_prime };
                let mut chosen = vec![0u64; law.len()];
                for _ in 0..*mult {
                    chosen[rng.categorical(law.weights())] += 1;
                }
                chosen
            })
            .collect();
        let mut next: BTreeMap<(u8, Vec<u32>), u64> = BTreeMap::new();
        let mut population = 0u64;
        for (((t, key), _), chosen) in groups.iter().zip(&choices) {
            let (law, slots) = if *t == 1 {
                (nu, &shifted)
            } else {
                (nu_prime, &plain)
            };
            for (j, &members) in chosen.iter().enumerate() {
                if members == 0 {
                    continue;
                }
                let k = law.support()[j] as u64;
                let mut child = key.clone();
                child[slots[j]] += 1;
                if *t == 1 {
                    *next.entry((1, child.clone())).or_insert(0) += members * k;
                    *next.entry((2, child)).or_insert(0) += members;
                    population += members * (k + 1);
                } else if k > 0 {
                    *next.entry((2, child)).or_insert(0) += members * k;
                    population += members * k;
                }
            }
        }
        next.retain(|_, m| *m > 0);
        if population > pop_cap {
            let last = generations.last_mut().expect("non-empty");
            last.type1.truncated = true;
            last.type2.truncated = true;
            last.merged.truncated = true;
            break;
        }
        current = next;
        generations.push(snapshot(n + 1, &current));
        if population == 0 {
            break;
        }
    }
    Ok(TwoTypeRun {
        support,
        generations,
        assumption_warning,
    })
}
