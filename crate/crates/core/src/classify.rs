//! Evanescence and persistence verdicts for a target law `ρ`.
//!
//! For the plain process (`q = 0`) the thresholds are both `H(ρ|ν)`; with
//! memory `q > 0` a law is evanescent when `⟨ρ, ln⟩ < Λ_q^*(ρ)` and strongly
//! persistent with positive probability when `⟨ρ, ln⟩ > H(ρ | qρ + (1−q)ν)`.
//! Between the two thresholds nothing is proven and the verdict is
//! [`VerdictKind::Indeterminate`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{self, OffspringLaw, ProbVector};
use crate::rate;
use crate::simulate::spine;

/// Margins within this distance of zero give no verdict.
pub const DECISION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    Evanescent,
    StronglyPersistentPositiveProb,
    NotStronglyPersistent,
    Indeterminate,
}

impl std::fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VerdictKind::Evanescent => "evanescent",
            VerdictKind::StronglyPersistentPositiveProb => "strongly_persistent",
            VerdictKind::NotStronglyPersistent => "not_strongly_persistent",
            VerdictKind::Indeterminate => "indeterminate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Rate threshold minus `⟨ρ, ln⟩`; positive means evanescent.
    pub margin_evanescence: f64,
    /// `⟨ρ, ln⟩` minus the entropy threshold; positive means strongly persistent.
    pub margin_persistence: f64,
    /// `q m_ρ + (1−q) m_ν < 1`.
    pub subcritical_flag: bool,
    /// Notes that do not change the verdict, e.g. a single positive atom.
    pub diagnostics: Vec<String>,
}

fn decide(margin_evanescence: f64, margin_persistence: f64, subcritical: bool) -> VerdictKind {
    if margin_evanescence > DECISION_TOLERANCE {
        VerdictKind::Evanescent
    } else if margin_persistence > DECISION_TOLERANCE {
        VerdictKind::StronglyPersistentPositiveProb
    } else if subcritical {
        VerdictKind::NotStronglyPersistent
    } else {
        VerdictKind::Indeterminate
    }
}

fn diagnostics(nu: &OffspringLaw) -> Vec<String> {
    let positive = nu.support().iter().filter(|&&k| k > 0).count();
    if positive == 1 {
        vec!["the law has a single positive atom: lineage statistics are deterministic".into()]
    } else {
        Vec::new()
    }
}

/// Aligns `ρ` with the support of `ν`; `None` when `ρ` charges an atom outside it.
fn restrict(rho: &ProbVector, nu: &OffspringLaw) -> Result<Option<ProbVector>> {
    let (r, _) = measures::align(rho, nu.as_prob())?;
    let outside = r
        .support()
        .iter()
        .zip(r.weights())
        .any(|(&k, &w)| w > 0.0 && nu.weight_of(k) == 0.0);
    if outside {
        return Ok(None);
    }
    Ok(Some(rho.on_support(nu.support())?))
}

fn subcritical(rho: &ProbVector, nu: &OffspringLaw, q: f64) -> bool {
    q * measures::mean(rho) + (1.0 - q) * nu.mean() < 1.0
}

/// Verdict for the plain Galton–Watson process.
pub fn classify_gw(rho: &ProbVector, nu: &OffspringLaw) -> Result<Verdict> {
    let sub = subcritical(rho, nu, 0.0);
    let diagnostics = diagnostics(nu);
    let Some(rho) = restrict(rho, nu)? else {
        return Ok(Verdict {
            kind: VerdictKind::Evanescent,
            margin_evanescence: f64::INFINITY,
            margin_persistence: f64::NEG_INFINITY,
            subcritical_flag: sub,
            diagnostics,
        });
    };
    let ln = measures::pair_ln(&rho).get();
    let h = measures::relative_entropy(&rho, nu.as_prob())?.get();
    let (me, mp) = if ln == f64::NEG_INFINITY {
        (f64::INFINITY, f64::NEG_INFINITY)
    } else {
        (h - ln, ln - h)
    };
    Ok(Verdict {
        kind: decide(me, mp, sub),
        margin_evanescence: me,
        margin_persistence: mp,
        subcritical_flag: sub,
        diagnostics,
    })
}

/// Verdict for the reinforced process with memory `q ∈ (0, 1)`.
pub fn classify_rgw(rho: &ProbVector, nu: &OffspringLaw, q: f64) -> Result<Verdict> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )));
    }
    let mut diagnostics = diagnostics(nu);
    let sub = subcritical(rho, nu, q);
    let Some(rho) = restrict(rho, nu)? else {
        // such a target is never drawn, so Λ_q^* is infinite there
        diagnostics.push("target charges atoms outside the support of the law".into());
        return Ok(Verdict {
            kind: VerdictKind::Evanescent,
            margin_evanescence: f64::INFINITY,
            margin_persistence: f64::NEG_INFINITY,
            subcritical_flag: sub,
            diagnostics,
        });
    };
    let ln = measures::pair_ln(&rho).get();
    if ln == f64::NEG_INFINITY {
        return Ok(Verdict {
            kind: VerdictKind::Evanescent,
            margin_evanescence: f64::INFINITY,
            margin_persistence: f64::NEG_INFINITY,
            subcritical_flag: sub,
            diagnostics,
        });
    }
    let h = measures::relative_entropy(&rho, &measures::mix(q, &rho, nu.as_prob())?)?.get();
    let dual = match rate::lambda_q_star(&rho, nu, q) {
        Ok(d) => d.value,
        // any dual iterate bounds Λ_q^* from below, which keeps an
        // evanescence verdict sound
        Err(Error::SolverStall { residual, best, .. }) => {
            diagnostics.push(format!(
                "dual solver stalled at residual {residual:e}; using the lower bound from its best iterate"
            ));
            best.value
        }
        Err(e) => return Err(e),
    };
    let (me, mp) = (dual - ln, ln - h);
    Ok(Verdict {
        kind: decide(me, mp, sub),
        margin_evanescence: me,
        margin_persistence: mp,
        subcritical_flag: sub,
        diagnostics,
    })
}

/// Smallest `q*` such that every `q > q*` certifies strong persistence of `ρ`
/// through `H(ρ | qρ + (1−q)ν) ≤ (1−q) H(ρ|ν)`. `None` when `H(ρ|ν) = ∞`.
pub fn min_memory_for_persistence(rho: &ProbVector, nu: &OffspringLaw) -> Result<Option<f64>> {
    if rho.weight_of(0) > 0.0 {
        return Err(Error::Precondition("target must not charge 0".into()));
    }
    if rho.weight_of(1) == 1.0 {
        return Err(Error::Precondition("target must differ from δ_1".into()));
    }
    let Some(rho) = restrict(rho, nu)? else {
        return Ok(None);
    };
    let h = measures::relative_entropy(&rho, nu.as_prob())?.get();
    let ln = measures::pair_ln(&rho).get();
    if h == 0.0 {
        return Ok(Some(0.0));
    }
    Ok(Some((1.0 - ln / h).max(0.0)))
}

/// `a(k) = ρ(k) / (q ρ(k) + (1−q) ν(k))`, indexed like the support of `ν`.
pub fn a_from_rho(rho: &ProbVector, nu: &OffspringLaw, q: f64) -> Result<Vec<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "memory parameter {q} outside (0, 1)"
        )));
    }
    if rho.weight_of(0) > 0.0 {
        return Err(Error::Precondition("target must not charge 0".into()));
    }
    let rho = restrict(rho, nu)?.ok_or_else(|| {
        Error::Precondition("target charges atoms outside the support of the law".into())
    })?;
    let a: Vec<f64> = rho
        .weights()
        .iter()
        .zip(nu.weights())
        .map(|(&r, &n)| r / (q * r + (1.0 - q) * n))
        .collect();
    let residual = spine::constraint_residual(&a, nu, q);
    if residual.abs() > 1e-10 {
        return Err(Error::NotANumber("activity constraint lost to rounding"));
    }
    Ok(a)
}

/// `π_a` together with the criterion value `Σ π_a(k) log(a(k)/k)`.
pub fn pi_from_a(a: &[f64], nu: &OffspringLaw, q: f64) -> Result<(ProbVector, f64)> {
    spine::check_activity(a, nu, q)?;
    let residual = spine::constraint_residual(a, nu, q);
    if residual.abs() > 1e-8 {
        return Err(Error::Precondition(format!(
            "activity vector violates the constraint by {residual:e}"
        )));
    }
    let pi = ProbVector::from_masses(nu.support().to_vec(), &spine::pi_weights(a, nu, q))?;
    let criterion = pi
        .weights()
        .iter()
        .zip(a)
        .zip(nu.support())
        .filter(|((&p, _), _)| p > 0.0)
        .map(|((&p, &x), &k)| p * (x / k as f64).ln())
        .sum();
    Ok((pi, criterion))
}

/// Outcome of the two-type criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoTypeCertificate {
    pub certified: bool,
    /// `⟨τμ, ln⟩ − H(τμ | ν)`.
    pub margin_first: f64,
    /// `s⟨τμ, ln⟩ + (1−s)⟨μ', ln⟩ − s H(τμ|ν) − (1−s) H(μ'|ν')`.
    pub margin_second: f64,
}

/// Shifts a law down by one atom; fails if it charges 0.
fn tau(mu: &ProbVector) -> Result<ProbVector> {
    if mu.weight_of(0) > 0.0 {
        return Err(Error::InvalidArgument(
            "a type-1 law cannot charge 0".into(),
        ));
    }
    let (support, weights): (Vec<u32>, Vec<f64>) = mu
        .support()
        .iter()
        .zip(mu.weights())
        .filter(|(&k, _)| k > 0)
        .map(|(&k, &w)| (k - 1, w))
        .unzip();
    ProbVector::from_masses(support, &weights)
}

/// `⟨μ, ln⟩ − H(μ|ν)` with `μ` first aligned on a common support.
fn gain(mu: &ProbVector, nu: &OffspringLaw) -> Result<f64> {
    let (m, n) = measures::align(mu, nu.as_prob())?;
    let ln = measures::pair_ln(&m).get();
    let h = measures::relative_entropy(&m, &n)?.get();
    if ln == f64::NEG_INFINITY || h == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(ln - h)
}

/// Weak-persistence certificate for the two-type tree given a decomposition
/// `ρ = s μ + (1−s) μ'` (`s = 1` is the strong-persistence special case).
pub fn two_type_weak_persistence(
    rho: &ProbVector,
    nu: &OffspringLaw,
    nu_prime: &OffspringLaw,
    s: f64,
    mu: &ProbVector,
    mu_prime: &ProbVector,
) -> Result<TwoTypeCertificate> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mixing weight {s} outside (0, 1]"
        )));
    }
    let mut union: Vec<u32> = rho
        .support()
        .iter()
        .chain(mu.support())
        .chain(mu_prime.support())
        .copied()
        .collect();
    union.sort_unstable();
    union.dedup();
    let (r, m, mp) = (
        rho.on_support(&union)?,
        mu.on_support(&union)?,
        mu_prime.on_support(&union)?,
    );
    let gap = r
        .weights()
        .iter()
        .zip(m.weights().iter().zip(mp.weights()))
        .map(|(x, (a, b))| (x - s * a - (1.0 - s) * b).abs())
        .fold(0.0, f64::max);
    if gap > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "decomposition misses the target by {gap:e}"
        )));
    }
    let first = gain(&tau(mu)?, nu)?;
    let second = if s == 1.0 {
        first
    } else {
        s * first + (1.0 - s) * gain(mu_prime, nu_prime)?
    };
    Ok(TwoTypeCertificate {
        certified: first > DECISION_TOLERANCE && second > DECISION_TOLERANCE,
        margin_first: first,
        margin_second: second,
    })
}

/// A decomposition found by [`two_type_grid_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTypeDecomposition {
    pub s: f64,
    pub mu: ProbVector,
    pub mu_prime: ProbVector,
    pub certificate: TwoTypeCertificate,
}

/// Scans `s ∈ {1/mesh, …, 1}` and `μ` on a simplex grid of mesh `1/mesh`
/// over the type-1 degrees `S + 1`, setting `μ' = (ρ − sμ)/(1−s)`. Returns the
/// decomposition with the largest `min(margin_first, margin_second)`.
pub fn two_type_grid_search(
    rho: &ProbVector,
    nu: &OffspringLaw,
    nu_prime: &OffspringLaw,
    mesh: u32,
) -> Result<Option<TwoTypeDecomposition>> {
    if mesh == 0 {
        return Err(Error::InvalidArgument("mesh must be positive".into()));
    }
    let type1: Vec<u32> = nu.support().iter().map(|k| k + 1).collect();
    let grid = simplex_grid(type1.len(), mesh);
    let mut best: Option<TwoTypeDecomposition> = None;
    for si in 1..=mesh {
        let s = si as f64 / mesh as f64;
        for point in &grid {
            let masses: Vec<f64> = point.iter().map(|&c| c as f64 / mesh as f64).collect();
            let mu = ProbVector::from_masses(type1.clone(), &masses)?;
            let mut union: Vec<u32> = rho.support().iter().chain(&type1).copied().collect();
            union.sort_unstable();
            union.dedup();
            let r = rho.on_support(&union)?;
            let m = mu.on_support(&union)?;
            let mu_prime = if si == mesh {
                // μ' is irrelevant at s = 1 but must be a law
                if measures::linf_distance(&r, &m)? > 1e-10 {
                    continue;
                }
                r.clone()
            } else {
                let rest: Vec<f64> = r
                    .weights()
                    .iter()
                    .zip(m.weights())
                    .map(|(x, y)| (x - s * y) / (1.0 - s))
                    .collect();
                if rest.iter().any(|v| *v < -1e-12) {
                    continue;
                }
                let rest: Vec<f64> = rest.iter().map(|v| v.max(0.0)).collect();
                ProbVector::from_masses(union.clone(), &rest)?
            };
            let cert = match two_type_weak_persistence(&r, nu, nu_prime, s, &m, &mu_prime) {
                Ok(c) => c,
                Err(Error::InvalidArgument(_)) => continue,
                Err(e) => return Err(e),
            };
            let score = cert.margin_first.min(cert.margin_second);
            let better = best.as_ref().is_none_or(|b| {
                score > b.certificate.margin_first.min(b.certificate.margin_second)
            });
            if better {
                best = Some(TwoTypeDecomposition {
                    s,
                    mu: m,
                    mu_prime,
                    certificate: cert,
                });
            }
        }
    }
    Ok(best)
}

/// All integer vectors of length `d` with entries summing to `mesh`.
fn simplex_grid(d: usize, mesh: u32) -> Vec<Vec<u32>> {
    if d == 1 {
        return vec![vec![mesh]];
    }
    let mut out = Vec::new();
    for first in 0..=mesh {
        for mut rest in simplex_grid(d - 1, mesh - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}
