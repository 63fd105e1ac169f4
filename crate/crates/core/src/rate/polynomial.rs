//! Closed-form integration of `∏_k (1 - s r_k)^{c_k}` over `[0, 1]` when every
//! exponent is a non-negative integer: the product is then a polynomial in `s`.

/// Exponents this close to an integer are treated as integers.
const INTEGER_SLACK: f64 = 1e-9;

/// Degree cap; above it the alternating coefficients lose too many digits.
pub const MAX_DEGREE: usize = 16;

/// Integer exponents, or `None` if some exponent is fractional or the
/// total degree exceeds [`MAX_DEGREE`].
pub fn integer_exponents(c: &[f64]) -> Option<Vec<u32>> {
    let mut out = Vec::with_capacity(c.len());
    for &x in c {
        let r = x.round();
        if (x - r).abs() > INTEGER_SLACK || r < 0.0 {
            return None;
        }
        out.push(r as u32);
    }
    (out.iter().map(|&d| d as usize).sum::<usize>() <= MAX_DEGREE).then_some(out)
}

/// Coefficients (ascending powers of `s`) of `∏ (1 - s r_k)^{e_k}`.
pub fn expand(factors: &[(f64, u32)]) -> Vec<f64> {
    let mut poly = vec![1.0];
    for &(r, e) in factors {
        for _ in 0..e {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, a) in poly.iter().enumerate() {
                next[i] += a;
                next[i + 1] -= r * a;
            }
            poly = next;
        }
    }
    poly
}

/// `∫_0^1 p(s) ds`.
pub fn integrate_unit(poly: &[f64]) -> f64 {
    poly.iter()
        .enumerate()
        .map(|(i, a)| a / (i as f64 + 1.0))
        .sum()
}

/// Multiplies by `s`.
pub fn times_s(poly: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend_from_slice(poly);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_and_integral() {
        // (1 - s)(1 - s/2) = 1 - 1.5 s + 0.5 s^2
        let p = expand(&[(1.0, 1), (0.5, 1)]);
        assert_eq!(p, vec![1.0, -1.5, 0.5]);
        let i = integrate_unit(&p);
        assert!((i - (1.0 - 0.75 + 0.5 / 3.0)).abs() < 1e-15);
        assert_eq!(integrate_unit(&times_s(&[1.0])), 0.5);
    }

    #[test]
    fn integer_detection() {
        assert_eq!(integer_exponents(&[1.0, 2.0 + 1e-12]), Some(vec![1, 2]));
        assert_eq!(integer_exponents(&[0.5]), None);
        assert_eq!(integer_exponents(&[10.0, 10.0]), None);
    }
}
