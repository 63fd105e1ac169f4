//! Adaptive Gauss–Kronrod integration on `[0, 1]` with a Gauss–Jacobi tail
//! panel for integrands of the form `(1 - s)^α · h(s)`.
//!
//! The interior is covered by globally adaptive 21-point Kronrod panels. The
//! last stretch `[1 - w, 1]` is integrated by a Gauss–Jacobi rule carrying the
//! weight `(1 - s)^α` exactly; two rules of different order estimate the tail
//! error, and `w` shrinks by a factor 10 (handing the released stretch to the
//! adaptive part) until the tail agrees with itself.

use std::cell::RefCell;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Accuracy settings for the integrals behind `Λ_q` and its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    rel_tol: f64,
    max_subdivisions: usize,
    /// Use the Gauss–Jacobi tail panel. Without it the algebraic zero at the
    /// right end is left to plain bisection.
    pub endpoint_weight: bool,
    /// Integrate polynomial integrands in closed form when all exponents are integers.
    pub polynomial_fast_path: bool,
}

impl QuadratureSpec {
    pub fn new(rel_tol: f64, max_subdivisions: usize, endpoint_weight: bool) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol <= 1e-4) {
            return Err(Error::InvalidArgument(format!(
                "quadrature tolerance {rel_tol} outside (0, 1e-4]"
            )));
        }
        if max_subdivisions == 0 {
            return Err(Error::InvalidArgument(
                "max subdivisions must be positive".into(),
            ));
        }
        Ok(Self {
            rel_tol,
            max_subdivisions,
            endpoint_weight,
            polynomial_fast_path: false,
        })
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    pub fn max_subdivisions(&self) -> usize {
        self.max_subdivisions
    }

    pub fn with_polynomial_fast_path(mut self, on: bool) -> Self {
        self.polynomial_fast_path = on;
        self
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            max_subdivisions: 4000,
            endpoint_weight: true,
            polynomial_fast_path: false,
        }
    }
}

#[allow(clippy::excessive_precision)]
const XGK21: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG10: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK21: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 21-point Kronrod panel with the QUADPACK error heuristic.
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK21[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK21[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK21[j] * (f1 + f2);
        res_abs += WGK21[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG10[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK21[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK21[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let hl = half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    let res_abs = res_abs * hl;
    let res_asc = res_asc * hl;
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Panel {
        a,
        b,
        value: res_k * half,
        error: err,
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

/// Globally adaptive Gauss–Kronrod on `[a, b]`. Stops once the summed error
/// estimate drops below `max(rel_tol·|I|, abs_tol)`.
pub fn adaptive_gk<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<Integral> {
    let first = gk21(f, a, b);
    if first.value.is_nan() {
        return Err(Error::NotANumber("quadrature integrand"));
    }
    let mut heap = BinaryHeap::new();
    let mut value = first.value;
    let mut error = first.error;
    heap.push(first);
    let mut subdivisions = 0;
    while error > (rel_tol * value.abs()).max(abs_tol) {
        if subdivisions >= max_subdivisions {
            return Err(Error::Quadrature {
                rel_error: error / value.abs(),
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel can no longer be split in floating point
            heap.push(Panel {
                error: 0.0,
                ..worst
            });
            error = heap.iter().map(|p| p.error).sum();
            if heap.iter().all(|p| p.error == 0.0) {
                break;
            }
            continue;
        }
        let left = gk21(f, worst.a, mid);
        let right = gk21(f, mid, worst.b);
        if left.value.is_nan() || right.value.is_nan() {
            return Err(Error::NotANumber("quadrature integrand"));
        }
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;
        if subdivisions % 64 == 0 {
            // resum to stop drift in the running totals
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
        }
    }
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(Integral {
        value,
        error,
        subdivisions,
    })
}

/// Nodes and weights of the `n`-point Gauss–Jacobi rule on `[-1, 1]` for the
/// weight `(1 - x)^α`, by the Golub–Welsch eigenvalue method.
pub fn gauss_jacobi(n: usize, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Jacobi exponent {alpha} must exceed -1"
        )));
    }
    if n == 0 {
        return Ok((vec![], vec![]));
    }
    let beta = 0.0f64;
    let ab = alpha + beta;
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let k = i as f64;
        let diag = if i == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * k + ab) * (2.0 * k + ab + 2.0))
        };
        jm[(i, i)] = diag;
        if i + 1 < n {
            let m = k + 1.0;
            let s = 2.0 * m + ab;
            let b = 4.0 * m * (m + alpha) * (m + beta) * (m + ab) / (s * s * (s + 1.0) * (s - 1.0));
            jm[(i, i + 1)] = b.sqrt();
            jm[(i + 1, i)] = b.sqrt();
        }
    }
    let mu0 = 2f64.powf(alpha + 1.0) / (alpha + 1.0);
    let eig = SymmetricEigen::new(jm);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

type Rule = std::sync::Arc<(Vec<f64>, Vec<f64>)>;

thread_local! {
    static JACOBI_CACHE: RefCell<HashMap<(usize, u64), Rule>> = RefCell::new(HashMap::new());
}

fn cached_jacobi(n: usize, alpha: f64) -> Result<Rule> {
    let key = (n, alpha.to_bits());
    if let Some(rule) = JACOBI_CACHE.with(|c| c.borrow().get(&key).cloned()) {
        return Ok(rule);
    }
    let rule = std::sync::Arc::new(gauss_jacobi(n, alpha)?);
    JACOBI_CACHE.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() > 4096 {
            c.clear();
        }
        c.insert(key, rule.clone());
    });
    Ok(rule)
}

/// `∫_0^w t^α exp(log_h(1 - t, t)) dt` by an `n`-point Jacobi rule.
fn jacobi_tail<G: Fn(f64, f64) -> f64>(log_h: &G, alpha: f64, w: f64, n: usize) -> Result<f64> {
    let rule = cached_jacobi(n, alpha)?;
    let (nodes, weights) = (&rule.0, &rule.1);
    // t = w(1 - x)/2, dt = w/2 dx
    let scale = (alpha + 1.0) * (0.5 * w).ln();
    let mut acc = 0.0;
    for (x, wt) in nodes.iter().zip(weights) {
        let t = 0.5 * w * (1.0 - x);
        acc += wt * (log_h(1.0 - t, t) + scale).exp();
    }
    Ok(acc)
}

const TAIL_LOW: usize = 20;
const TAIL_HIGH: usize = 40;
const MAX_TAIL_LEVELS: usize = 300;

/// `∫_0^1 (1 - s)^α exp(log_h(s, 1 - s)) ds` for `α > -1` and `log_h` smooth
/// on `[0, 1]`.
///
/// The integration variable is `t = 1 - s`, and `log_h` receives both `s`
/// and the exact `t`, so integrands can avoid forming `1 - s` near `s = 1`.
/// `abs_tol` lets callers ask for accuracy relative to some other scale than
/// the integral itself (gradient numerators are measured against the
/// normalizing integral).
pub fn integrate_endpoint_weighted<G: Fn(f64, f64) -> f64>(
    log_h: &G,
    alpha: f64,
    abs_tol: f64,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    let full = |t: f64| -> f64 {
        let l = log_h(1.0 - t, t);
        if l == f64::NEG_INFINITY {
            return 0.0;
        }
        if t <= 0.0 {
            return if alpha > 0.0 {
                0.0
            } else if alpha == 0.0 {
                l.exp()
            } else {
                f64::INFINITY
            };
        }
        (alpha * t.ln() + l).exp()
    };
    if !spec.endpoint_weight {
        return adaptive_gk(
            &full,
            0.0,
            1.0,
            spec.rel_tol,
            abs_tol,
            spec.max_subdivisions,
        );
    }

    let mut w = 0.1;
    let mut interior = adaptive_gk(&full, w, 1.0, spec.rel_tol, abs_tol, spec.max_subdivisions)?;
    let mut value = interior.value;
    let mut error = interior.error;
    let mut subdivisions = interior.subdivisions;
    for level in 0..MAX_TAIL_LEVELS {
        let coarse = jacobi_tail(log_h, alpha, w, TAIL_LOW)?;
        let fine = jacobi_tail(log_h, alpha, w, TAIL_HIGH)?;
        if fine.is_nan() || coarse.is_nan() {
            return Err(Error::NotANumber("Gauss-Jacobi tail"));
        }
        let tail_err = (fine - coarse).abs();
        let total = value + fine;
        let budget = (spec.rel_tol * total.abs()).max(abs_tol);
        if tail_err + error <= budget || level + 1 == MAX_TAIL_LEVELS {
            if tail_err + error > budget && tail_err > budget {
                return Err(Error::Quadrature {
                    rel_error: (tail_err + error) / total.abs(),
                    subdivisions,
                });
            }
            return Ok(Integral {
                value: total,
                error: error + tail_err,
                subdivisions,
            });
        }
        let next = w / 10.0;
        interior = adaptive_gk(
            &full,
            next,
            w,
            spec.rel_tol,
            abs_tol * 0.1,
            spec.max_subdivisions,
        )?;
        value += interior.value;
        error += interior.error;
        subdivisions += interior.subdivisions + 1;
        w = next;
    }
    unreachable!("the last tail level always returns")
}
