//! Zero-inflated Poisson and negative-binomial probability mass functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::special::{ln_factorial, ln_gamma_ratio};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Zero-inflated Poisson.
    Zip,
    /// Zero-inflated negative binomial with over-dispersion θ.
    Zinb,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Zip => "ZIP",
            Family::Zinb => "ZINB",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zip" | "poisson" => Ok(Family::Zip),
            "zinb" | "negbin" => Ok(Family::Zinb),
            other => Err(Error::config(format!("unknown family {other:?} (zip|zinb)"))),
        }
    }
}

/// `ln(e^a + e^b)` without overflow; either argument may be `-inf`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 + e^t)`.
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Log of the count-component pmf at `y` (Poisson or negative binomial
/// parameterised by mean `lambda` and shape `theta`).
pub fn ln_count_pmf(family: Family, y: u64, lambda: f64, theta: f64) -> f64 {
    match family {
        Family::Zip => {
            if y == 0 {
                -lambda
            } else {
                y as f64 * lambda.ln() - lambda - ln_factorial(y)
            }
        }
        Family::Zinb => {
            let tail = -theta * (lambda / theta).ln_1p();
            if y == 0 {
                tail
            } else {
                ln_gamma_ratio(y, theta) - ln_factorial(y) + y as f64 * (lambda.ln() - (lambda + theta).ln()) + tail
            }
        }
    }
}

fn check_domain(family: Family, lambda: f64, pi: f64, theta: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::domain(format!("pi must lie in [0, 1], got {pi}")));
    }
    if family == Family::Zinb && !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::domain(format!("theta must be positive and finite, got {theta}")));
    }
    Ok(())
}

/// Log of the zero-inflated pmf, `ln[π·1(y=0) + (1−π)·f(y)]`. No domain
/// checks; use [`pmf`] for validated input.
pub fn ln_pmf_unchecked(family: Family, y: u64, lambda: f64, pi: f64, theta: f64) -> f64 {
    let ln_count = ln_count_pmf(family, y, lambda, theta);
    let ln_keep = (-pi).ln_1p();
    if y == 0 {
        log_add_exp(pi.ln(), ln_keep + ln_count)
    } else {
        ln_keep + ln_count
    }
}

pub fn ln_pmf(family: Family, y: u64, lambda: f64, pi: f64, theta: f64) -> Result<f64> {
    check_domain(family, lambda, pi, theta)?;
    Ok(ln_pmf_unchecked(family, y, lambda, pi, theta))
}

/// `P(Y = y)` under the zero-inflated model.
pub fn pmf(family: Family, y: u64, lambda: f64, pi: f64, theta: f64) -> Result<f64> {
    ln_pmf(family, y, lambda, pi, theta).map(f64::exp)
}

/// Mean and variance of the zero-inflated distribution.
pub fn moments(family: Family, lambda: f64, pi: f64, theta: f64) -> Result<(f64, f64)> {
    check_domain(family, lambda, pi, theta)?;
    let keep = 1.0 - pi;
    let mean = keep * lambda;
    let var = match family {
        Family::Zip => keep * (lambda + pi * lambda * lambda),
        Family::Zinb => keep * (lambda + (1.0 / theta + pi) * lambda * lambda),
    };
    Ok((mean, var))
}
