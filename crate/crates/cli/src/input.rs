//! Parsing of command-line values: memory parameters, laws, lists and grids.

use std::path::Path;

use rgw::measures::{OffspringLaw, ProbVector};
use serde::de::DeserializeOwned;

use crate::CliError;

/// A real given as a decimal (`0.25`) or an exact ratio of integers (`1/3`).
pub fn parse_real(s: &str) -> Result<f64, CliError> {
    let s = s.trim();
    let value = if let Some((num, den)) = s.split_once('/') {
        let num: i64 = num
            .trim()
            .parse()
            .map_err(|_| CliError::validation(format!("bad numerator in {s:?}")))?;
        let den: i64 = den
            .trim()
            .parse()
            .map_err(|_| CliError::validation(format!("bad denominator in {s:?}")))?;
        if den == 0 {
            return Err(CliError::validation(format!("zero denominator in {s:?}")));
        }
        // both integers are exact in f64 below 2^53, so the quotient is correctly rounded
        if num.unsigned_abs() > 1 << 53 || den.unsigned_abs() > 1 << 53 {
            return Err(CliError::validation(format!(
                "ratio {s:?} too large to parse exactly"
            )));
        }
        num as f64 / den as f64
    } else {
        s.parse::<f64>()
            .map_err(|_| CliError::validation(format!("not a number: {s:?}")))?
    };
    if !value.is_finite() {
        return Err(CliError::validation(format!("not a finite number: {s:?}")));
    }
    Ok(value)
}

/// Memory parameter in `[0, 1)`, or `(0, 1)` when `allow_zero` is false.
pub fn parse_q(s: &str, allow_zero: bool) -> Result<f64, CliError> {
    let q = parse_real(s)?;
    let ok = if allow_zero {
        (0.0..1.0).contains(&q)
    } else {
        q > 0.0 && q < 1.0
    };
    if !ok {
        let range = if allow_zero { "[0, 1)" } else { "(0, 1)" };
        return Err(CliError::validation(format!(
            "memory parameter {s} outside {range}"
        )));
    }
    Ok(q)
}

/// `a:b:step`, inclusive of `b` up to rounding.
pub fn parse_q_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        return Err(CliError::validation(format!(
            "grid {s:?} is not of the form a:b:step"
        )));
    };
    let (a, b, step) = (parse_real(a)?, parse_real(b)?, parse_real(step)?);
    if !(step > 0.0) || b < a {
        return Err(CliError::validation(format!("empty grid {s:?}")));
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    if n > 10_000_000 {
        return Err(CliError::validation(format!(
            "grid {s:?} has too many points"
        )));
    }
    Ok((0..=n).map(|i| a + i as f64 * step).collect())
}

/// Number of cells per unit for a mesh given as a step (`0.01`, `1/200`).
pub fn parse_mesh(s: &str) -> Result<u32, CliError> {
    let step = parse_real(s)?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(CliError::validation(format!("mesh {s} outside (0, 1]")));
    }
    let m = (1.0 / step).round();
    if (m * step - 1.0).abs() > 1e-9 {
        return Err(CliError::validation(format!("mesh {s} does not divide 1")));
    }
    if m > 1e6 {
        return Err(CliError::validation(format!("mesh {s} too fine")));
    }
    Ok(m as u32)
}

/// Comma-separated reals, each accepting the forms of [`parse_real`].
pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(parse_real).collect()
}

/// Inline JSON when the argument starts with `{`, otherwise a file path.
fn load_json<T: DeserializeOwned>(arg: &str, what: &str) -> Result<T, CliError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(Path::new(arg))
            .map_err(|e| CliError::validation(format!("cannot read {what} {arg:?}: {e}")))?
    };
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("invalid {what} {arg:?}: {e}")))
}

pub fn load_law(arg: &str) -> Result<OffspringLaw, CliError> {
    load_json(arg, "law")
}

pub fn load_prob(arg: &str) -> Result<ProbVector, CliError> {
    load_json(arg, "probability vector")
}
