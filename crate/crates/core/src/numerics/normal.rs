//! Standard normal distribution.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{domain, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `P(Z <= x)` for a standard normal `Z`. Infinite arguments map to 0 or 1.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `P(Z > x)`, accurate far into the right tail.
pub fn std_normal_sf(x: f64) -> f64 {
    std_normal_cdf(-x)
}

/// Inverse of [`std_normal_cdf`] on the open interval (0, 1).
///
/// Starts from the inverse complementary error function and applies one
/// Halley step against the forward cdf so the round trip is tight.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("normal quantile needs p in (0, 1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    let pdf = std_normal_pdf(x);
    if pdf > 0.0 {
        let e = std_normal_cdf(x) - p;
        let u = e / pdf;
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}
