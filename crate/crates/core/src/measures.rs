//! Probability laws on a finite set of offspring counts.
//!
//! Every law carries its support explicitly as a strictly increasing list of
//! non-negative integers. Operations that combine two laws require identical
//! supports; use [`align`] to promote two laws to the union of their supports.
//!
//! Extended-real results (entropies, pairings against `ln`) are returned as
//! [`ExtReal`], which admits `±∞` but never NaN.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerated drift of a probability vector's total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A real number that may be `+∞` or `-∞` but never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct ExtReal(f64);

impl ExtReal {
    pub const POS_INF: ExtReal = ExtReal(f64::INFINITY);
    pub const NEG_INF: ExtReal = ExtReal(f64::NEG_INFINITY);
    pub const ZERO: ExtReal = ExtReal(0.0);

    pub fn new(x: f64) -> Result<Self> {
        if x.is_nan() {
            Err(Error::NotANumber("extended real"))
        } else {
            Ok(ExtReal(x))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// The finite value, or `None` at `±∞`.
    pub fn finite(self) -> Option<f64> {
        self.is_finite().then_some(self.0)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<ExtReal> for f64 {
    fn from(x: ExtReal) -> f64 {
        x.0
    }
}

fn check_support(support: &[u32]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::InvalidLaw("empty support".into()));
    }
    if support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidLaw(format!(
            "support must be strictly increasing, got {support:?}"
        )));
    }
    Ok(())
}

fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidLaw(format!(
            "weight {w} is not a finite non-negative number"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidLaw(format!("weights sum to {total}, not 1")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// A probability vector on a fixed finite support. Individual weights may be zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawJson", into = "LawJson")]
pub struct ProbVector {
    support: Vec<u32>,
    weights: Vec<f64>,
}

impl ProbVector {
    pub fn new(support: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        check_support(&support)?;
        if support.len() != weights.len() {
            return Err(Error::InvalidLaw(format!(
                "{} atoms but {} weights",
                support.len(),
                weights.len()
            )));
        }
        let weights = normalized_weights(&weights)?;
        Ok(Self { support, weights })
    }

    /// Point mass at `atom`, on the given support.
    pub fn dirac(support: &[u32], atom: u32) -> Result<Self> {
        let idx = support.iter().position(|&k| k == atom).ok_or_else(|| {
            Error::InvalidArgument(format!("atom {atom} not in support {support:?}"))
        })?;
        let mut weights = vec![0.0; support.len()];
        weights[idx] = 1.0;
        Self::new(support.to_vec(), weights)
    }

    /// Builds a vector from unnormalized non-negative masses.
    pub fn from_masses(support: Vec<u32>, masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidLaw(format!("masses sum to {total}")));
        }
        if masses.iter().any(|m| *m < 0.0 || m.is_nan()) {
            return Err(Error::InvalidLaw("negative or NaN mass".into()));
        }
        let weights = masses.iter().map(|m| m / total).collect();
        Self::new(support, weights)
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Weight of `atom`; zero when the atom lies outside the support.
    pub fn weight_of(&self, atom: u32) -> f64 {
        self.support
            .binary_search(&atom)
            .map(|i| self.weights[i])
            .unwrap_or(0.0)
    }

    /// Atoms carrying positive weight.
    pub fn positive_atoms(&self) -> impl Iterator<Item = (usize, u32, f64)> + '_ {
        self.support
            .iter()
            .zip(&self.weights)
            .enumerate()
            .filter(|(_, (_, w))| **w > 0.0)
            .map(|(i, (k, w))| (i, *k, *w))
    }

    /// Restriction to another support containing every atom of positive weight.
    pub fn on_support(&self, support: &[u32]) -> Result<Self> {
        check_support(support)?;
        for (_, k, _) in self.positive_atoms() {
            if support.binary_search(&k).is_err() {
                return Err(Error::InvalidArgument(format!(
                    "atom {k} has positive weight but is missing from {support:?}"
                )));
            }
        }
        let weights = support.iter().map(|&k| self.weight_of(k)).collect();
        Self::new(support.to_vec(), weights)
    }

    pub fn same_support(&self, other: &ProbVector) -> Result<()> {
        if self.support == other.support {
            Ok(())
        } else {
            Err(Error::SupportMismatch {
                left: self.support.clone(),
                right: other.support.clone(),
            })
        }
    }
}

/// A finitely supported reproduction law with strictly positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawJson", into = "LawJson")]
pub struct OffspringLaw {
    inner: ProbVector,
}

impl OffspringLaw {
    /// Zero-weight atoms are dropped.
    pub fn new(support: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        let full = ProbVector::new(support, weights)?;
        let (support, weights): (Vec<u32>, Vec<f64>) =
            full.positive_atoms().map(|(_, k, w)| (k, w)).unzip();
        Ok(Self {
            inner: ProbVector::new(support, weights)?,
        })
    }

    pub fn dirac(atom: u32) -> Self {
        Self {
            inner: ProbVector {
                support: vec![atom],
                weights: vec![1.0],
            },
        }
    }

    /// Uniform law on the given atoms.
    pub fn uniform(support: Vec<u32>) -> Result<Self> {
        let n = support.len() as f64;
        let weights = vec![1.0 / n; support.len()];
        Self::new(support, weights)
    }

    pub fn support(&self) -> &[u32] {
        self.inner.support()
    }

    pub fn weights(&self) -> &[f64] {
        self.inner.weights()
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn weight_of(&self, atom: u32) -> f64 {
        self.inner.weight_of(atom)
    }

    pub fn as_prob(&self) -> &ProbVector {
        &self.inner
    }

    /// The same law viewed on a larger support, zero-filled.
    pub fn on_support(&self, support: &[u32]) -> Result<ProbVector> {
        self.inner.on_support(support)
    }

    pub fn max_atom(&self) -> u32 {
        *self.support().last().expect("non-empty support")
    }

    pub fn mean(&self) -> f64 {
        mean(&self.inner)
    }

    /// Laws whose positive part of the support is a single atom. Such laws are
    /// accepted but uninteresting for the persistence questions.
    pub fn is_degenerate(&self) -> bool {
        self.support().iter().filter(|&&k| k > 0).count() <= 1
    }
}

impl From<OffspringLaw> for ProbVector {
    fn from(law: OffspringLaw) -> ProbVector {
        law.inner
    }
}

/// JSON form shared by laws and probability vectors:
/// `{"support":[1,2],"probs":[0.5,0.5]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawJson {
    pub support: Vec<u32>,
    pub probs: Vec<f64>,
}

impl TryFrom<LawJson> for ProbVector {
    type Error = Error;
    fn try_from(j: LawJson) -> Result<Self> {
        ProbVector::new(j.support, j.probs)
    }
}

impl TryFrom<LawJson> for OffspringLaw {
    type Error = Error;
    fn try_from(j: LawJson) -> Result<Self> {
        OffspringLaw::new(j.support, j.probs)
    }
}

impl From<ProbVector> for LawJson {
    fn from(p: ProbVector) -> Self {
        LawJson {
            support: p.support,
            probs: p.weights,
        }
    }
}

impl From<OffspringLaw> for LawJson {
    fn from(p: OffspringLaw) -> Self {
        p.inner.into()
    }
}

/// Integer counts per atom of a support, e.g. the out-degrees seen along a lineage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmpiricalMeasure {
    support: Vec<u32>,
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalMeasure {
    pub fn new(support: Vec<u32>, counts: Vec<u64>) -> Result<Self> {
        check_support(&support)?;
        if support.len() != counts.len() {
            return Err(Error::InvalidArgument(
                "counts and support differ in length".into(),
            ));
        }
        let total = counts.iter().sum();
        Ok(Self {
            support,
            counts,
            total,
        })
    }

    pub fn empty(support: &[u32]) -> Self {
        Self {
            support: support.to_vec(),
            counts: vec![0; support.len()],
            total: 0,
        }
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn add_index(&mut self, idx: usize) {
        self.counts[idx] += 1;
        self.total += 1;
    }

    /// Normalized counts. Fails when the measure is empty.
    pub fn to_prob(&self) -> Result<ProbVector> {
        if self.total == 0 {
            return Err(Error::InvalidArgument("empty empirical measure".into()));
        }
        let n = self.total as f64;
        let weights = self.counts.iter().map(|&c| c as f64 / n).collect();
        ProbVector::new(self.support.clone(), weights)
    }
}

/// A vector in `[-∞, ∞)^S`. `-∞` entries switch the corresponding atom off.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights {
    values: Vec<f64>,
}

impl LogWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument(
                "log-weights must lie in [-inf, inf)".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    /// `k ↦ ln k` on the support, with `ln 0 = -∞`.
    pub fn ln(support: &[u32]) -> Self {
        Self {
            values: support
                .iter()
                .map(|&k| {
                    if k == 0 {
                        f64::NEG_INFINITY
                    } else {
                        (k as f64).ln()
                    }
                })
                .collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All entries `-∞` (including the empty vector).
    pub fn is_all_neg_inf(&self) -> bool {
        self.values.iter().all(|v| *v == f64::NEG_INFINITY)
    }

    /// Largest finite entry, if any.
    pub fn max_finite(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .max_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal))
    }

    /// Adds `c` to every finite entry.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}

/// Returns copies of `a` and `b` on the union of their supports.
pub fn align(a: &ProbVector, b: &ProbVector) -> Result<(ProbVector, ProbVector)> {
    let mut union: Vec<u32> = a.support().iter().chain(b.support()).copied().collect();
    union.sort_unstable();
    union.dedup();
    Ok((a.on_support(&union)?, b.on_support(&union)?))
}

/// `H(ρ|ν) = Σ ρ(k) log(ρ(k)/ν(k))`, `+∞` when ρ is not absolutely continuous w.r.t. ν.
pub fn relative_entropy(rho: &ProbVector, nu: &ProbVector) -> Result<ExtReal> {
    rho.same_support(nu)?;
    let mut h = 0.0;
    for (&r, &n) in rho.weights().iter().zip(nu.weights()) {
        if r == 0.0 {
            continue;
        }
        if n == 0.0 {
            return Ok(ExtReal::POS_INF);
        }
        h += r * (r / n).ln();
    }
    // rounding can leave a tiny negative value near ρ = ν
    ExtReal::new(h.max(0.0))
}

/// `⟨ρ, λ⟩` with `0·(-∞) = 0`.
pub fn pair(rho: &ProbVector, lam: &LogWeights) -> Result<ExtReal> {
    if rho.len() != lam.len() {
        return Err(Error::InvalidArgument(format!(
            "pairing a vector on {} atoms with {} log-weights",
            rho.len(),
            lam.len()
        )));
    }
    let mut s = 0.0;
    for (&r, &l) in rho.weights().iter().zip(lam.values()) {
        if r == 0.0 {
            continue;
        }
        if l == f64::NEG_INFINITY {
            return Ok(ExtReal::NEG_INF);
        }
        s += r * l;
    }
    ExtReal::new(s)
}

/// `⟨ρ, ln⟩`.
pub fn pair_ln(rho: &ProbVector) -> ExtReal {
    pair(rho, &LogWeights::ln(rho.support())).expect("lengths agree by construction")
}

/// The size-biased law `k ν(k) / m_ν`.
pub fn size_bias(nu: &OffspringLaw) -> Result<ProbVector> {
    let m = nu.mean();
    if m <= 0.0 {
        return Err(Error::DegenerateLaw(
            "size-biasing needs a positive mean".into(),
        ));
    }
    let weights = nu
        .support()
        .iter()
        .zip(nu.weights())
        .map(|(&k, &w)| k as f64 * w / m)
        .collect();
    ProbVector::new(nu.support().to_vec(), weights)
}

pub fn mean(rho: &ProbVector) -> f64 {
    rho.support()
        .iter()
        .zip(rho.weights())
        .map(|(&k, &w)| k as f64 * w)
        .sum()
}

/// `q ρ + (1 - q) ν`.
pub fn mix(q: f64, rho: &ProbVector, nu: &ProbVector) -> Result<ProbVector> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "mixing weight {q} outside [0, 1]"
        )));
    }
    rho.same_support(nu)?;
    let weights = rho
        .weights()
        .iter()
        .zip(nu.weights())
        .map(|(r, n)| q * r + (1.0 - q) * n)
        .collect();
    ProbVector::new(rho.support().to_vec(), weights)
}

/// Sup-norm distance.
pub fn linf_distance(a: &ProbVector, b: &ProbVector) -> Result<f64> {
    a.same_support(b)?;
    Ok(a.weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
