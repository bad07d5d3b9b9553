//! Student t distribution with integer degrees of freedom.

use std::f64::consts::PI;

use statrs::function::beta::beta_reg;


use super::root::brent;
use crate::error::{domain, Result};

fn check_df(df: u64) -> Result<f64> {
    if df < 1 {
        return Err(domain("t distribution needs df >= 1"));
    }
    Ok(df as f64)
}

/// Log density normalising constant, `ln f(0)`.
fn ln_mode_density(nu: f64) -> f64 {
    libm::lgamma(0.5 * (nu + 1.0)) - libm::lgamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

pub fn t_pdf(x: f64, df: u64) -> Result<f64> {
    let nu = check_df(df)?;
    Ok((ln_mode_density(nu) - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp())
}

/// `f(x) / f(0)`, computed without the gamma-function constant.
pub fn t_density_ratio(x: f64, df: u64) -> Result<f64> {
    let nu = check_df(df)?;
    Ok((-0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp())
}

pub fn t_cdf(x: f64, df: u64) -> Result<f64> {
    let nu = check_df(df)?;
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let x2 = x * x;
    // two-sided tail mass P(|T| > |x|), picking the better-conditioned beta form
    let tail = if x2 < nu {
        1.0 - beta_reg(0.5, 0.5 * nu, x2 / (nu + x2))
    } else {
        beta_reg(0.5 * nu, 0.5, nu / (nu + x2))
    };
    Ok(if x > 0.0 { 1.0 - 0.5 * tail } else { 0.5 * tail })
}

pub fn t_quantile(p: f64, df: u64) -> Result<f64> {
    check_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("t quantile needs p in (0, 1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // work in the lower half and reflect
    let (q, sign) = if p < 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    let cdf = |x: f64| t_cdf(x, df).unwrap_or(f64::NAN);
    let mut lo = -1.0;
    while cdf(lo) > q {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(domain("t quantile out of representable range"));
        }
    }
    let x = brent(|x| cdf(x) - q, lo, 0.0, 1e-14 * lo.abs().max(1.0), 0.0)?;
    Ok(sign * x)
}
