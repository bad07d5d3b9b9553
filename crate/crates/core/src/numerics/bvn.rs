//! Bivariate normal rectangle probabilities.
//!
//! Orthant probabilities follow Genz's double precision refinement of the
//! Drezner–Wesolowsky method: Gauss–Legendre quadrature over the correlation
//! parameter for |r| < 0.925, and an asymptotic expansion plus quadrature
//! near |r| = 1. Accuracy is around 1e-15 absolute.

#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::normal::std_normal_cdf;
use crate::error::{domain, Result};

/// Standardized bounds beyond this are treated as infinite (tail mass < 1e-17).
const TRUNCATE_AT: f64 = 8.5;

// (weight, node) pairs; nodes are the negative half of the symmetric rule
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];
const GL12: [(f64, f64); 6] = [
    (0.04717533638651177, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];
const GL20: [(f64, f64); 10] = [
    (0.01761400713915212, -0.9931285991850949),
    (0.04060142980038694, -0.9639719272779138),
    (0.06267204833410906, -0.9122344282513259),
    (0.08327674157670475, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.07652652113349733),
];

/// A bivariate normal law on `(Y1, Y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvnSpec {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub corr: f64,
}

impl BvnSpec {
    pub fn new(mean1: f64, mean2: f64, var1: f64, var2: f64, corr: f64) -> Result<Self> {
        let spec = Self { mean1, mean2, var1, var2, corr };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the law from a covariance rather than a correlation.
    pub fn from_covariance(mean1: f64, mean2: f64, var1: f64, var2: f64, cov: f64) -> Result<Self> {
        if !(var1 > 0.0 && var2 > 0.0) {
            return Err(domain("bivariate normal variances must be positive"));
        }
        let corr = (cov / (var1 * var2).sqrt()).clamp(-1.0, 1.0);
        Self::new(mean1, mean2, var1, var2, corr)
    }

    pub fn standard(corr: f64) -> Result<Self> {
        Self::new(0.0, 0.0, 1.0, 1.0, corr)
    }

    fn validate(&self) -> Result<()> {
        if !(self.var1 > 0.0 && self.var2 > 0.0) || !self.var1.is_finite() || !self.var2.is_finite() {
            return Err(domain("bivariate normal variances must be positive and finite"));
        }
        if !(-1.0..=1.0).contains(&self.corr) {
            return Err(domain(format!("correlation {} outside [-1, 1]", self.corr)));
        }
        if !self.mean1.is_finite() || !self.mean2.is_finite() {
            return Err(domain("bivariate normal means must be finite"));
        }
        Ok(())
    }
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if r >= 1.0 {
        return std_normal_cdf(-h.max(k));
    }
    if r <= -1.0 {
        // Y = -X: h < X < -k
        return (std_normal_cdf(-k) - std_normal_cdf(h)).max(0.0);
    }
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        if r != 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = r.asin();
            for &(w, x) in quad {
                for sn in [(0.5 * asr * (1.0 + x)).sin(), (0.5 * asr * (1.0 - x)).sin()] {
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (4.0 * PI);
        }
        bvn += std_normal_cdf(-h) * std_normal_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-0.5 * (b_s / a_s + hk)).exp()
            * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = b_s.sqrt();
            bvn -= (-0.5 * hk).exp()
                * (2.0 * PI).sqrt()
                * std_normal_cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a *= 0.5;
        for &(w, x) in quad {
            for xs in [a * (1.0 + x), a * (1.0 - x)] {
                let xs = xs * xs;
                let rs = (1.0 - xs).sqrt();
                let asr = -0.5 * (b_s / xs + hk);
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / (2.0 * PI);
        if r > 0.0 {
            bvn += std_normal_cdf(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                bvn += if h < 0.0 {
                    std_normal_cdf(k) - std_normal_cdf(h)
                } else {
                    std_normal_cdf(-h) - std_normal_cdf(-k)
                };
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Standard bivariate normal cdf `P(X <= x, Y <= y)` with infinite limits allowed.
pub fn bvn_cdf(x: f64, y: f64, r: f64) -> f64 {
    let x = truncate(x);
    let y = truncate(y);
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return std_normal_cdf(y);
    }
    if y == f64::INFINITY {
        return std_normal_cdf(x);
    }
    bvn_upper(-x, -y, r)
}

fn truncate(z: f64) -> f64 {
    if z > TRUNCATE_AT {
        f64::INFINITY
    } else if z < -TRUNCATE_AT {
        f64::NEG_INFINITY
    } else {
        z
    }
}

/// `P(lo1 <= Y1 <= hi1, lo2 <= Y2 <= hi2)`; bounds may be infinite.
pub fn bvn_rect_prob(spec: &BvnSpec, lo1: f64, hi1: f64, lo2: f64, hi2: f64) -> Result<f64> {
    spec.validate()?;
    if [lo1, hi1, lo2, hi2].iter().any(|v| v.is_nan()) {
        return Err(domain("rectangle bounds must not be NaN"));
    }
    if lo1 > hi1 || lo2 > hi2 {
        return Err(domain(format!(
            "inverted rectangle bounds [{lo1}, {hi1}] x [{lo2}, {hi2}]"
        )));
    }
    let (sd1, sd2) = (spec.var1.sqrt(), spec.var2.sqrt());
    let l1 = (lo1 - spec.mean1) / sd1;
    let h1 = (hi1 - spec.mean1) / sd1;
    let l2 = (lo2 - spec.mean2) / sd2;
    let h2 = (hi2 - spec.mean2) / sd2;
    let r = spec.corr;
    let p = bvn_cdf(h1, h2, r) - bvn_cdf(l1, h2, r) - bvn_cdf(h1, l2, r) + bvn_cdf(l1, l2, r);
    Ok(p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    /// Conditional-normal integral: P(X <= x, Y <= y) = int_{-inf}^{x} phi(u) Phi((y - r u)/sqrt(1-r^2)) du
    fn cdf_by_conditioning(x: f64, y: f64, r: f64) -> f64 {
        let lo = -12.0;
        let hi = x.min(12.0);
        if hi <= lo {
            return 0.0;
        }
        let n = 40_000;
        let h = (hi - lo) / n as f64;
        let s = (1.0 - r * r).sqrt();
        let g = |u: f64| {
            super::super::normal::std_normal_pdf(u) * std_normal_cdf((y - r * u) / s)
        };
        let mut acc = g(lo) + g(hi);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn quadrature_nodes_are_gauss_legendre() {
        for rule in [&GL6[..], &GL12[..], &GL20[..]] {
            let wsum: f64 = rule.iter().map(|(w, _)| 2.0 * w).sum();
            assert!((wsum - 2.0).abs() < 1e-14);
            // exact for x^2 and x^4 on [-1, 1]
            let m2: f64 = rule.iter().map(|(w, x)| 2.0 * w * x * x).sum();
            let m4: f64 = rule.iter().map(|(w, x)| 2.0 * w * x.powi(4)).sum();
            assert!((m2 - 2.0 / 3.0).abs() < 1e-14);
            assert!((m4 - 2.0 / 5.0).abs() < 1e-14);
        }
    }

    #[test]
    fn full_plane_and_orthant() {
        let spec = BvnSpec::standard(0.5).unwrap();
        assert!((bvn_rect_prob(&spec, -INF, INF, -INF, INF).unwrap() - 1.0).abs() < 1e-10);
        let p = bvn_rect_prob(&spec, 0.0, INF, 0.0, INF).unwrap();
        let expected = 0.25 + 0.5f64.asin() / (2.0 * PI);
        assert!((p - expected).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn zero_correlation_factorizes() {
        let spec = BvnSpec::new(1.0, -2.0, 4.0, 0.5, 0.0).unwrap();
        let p = bvn_rect_prob(&spec, -0.3, 2.5, -2.4, INF).unwrap();
        let m1 = std_normal_cdf((2.5 - 1.0) / 2.0) - std_normal_cdf((-0.3 - 1.0) / 2.0);
        let m2 = 1.0 - std_normal_cdf((-2.4 + 2.0) / 0.5f64.sqrt());
        assert!((p - m1 * m2).abs() < 1e-12);
    }

    #[test]
    fn matches_conditioning_oracle_over_correlation_range() {
        for r in [-0.999, -0.95, -0.93, -0.8, -0.5, -0.2, 0.1, 0.4, 0.7, 0.9, 0.93, 0.97, 0.999] {
            for (x, y) in [(0.0, 0.0), (-1.3, 0.7), (1.9, -0.4), (2.5, 2.1), (-2.0, -1.5)] {
                let a = bvn_cdf(x, y, r);
                let b = cdf_by_conditioning(x, y, r);
                assert!((a - b).abs() < 1e-9, "r {r} x {x} y {y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn degenerate_correlations() {
        assert!((bvn_cdf(0.3, 1.0, 1.0) - std_normal_cdf(0.3)).abs() < 1e-15);
        assert!((bvn_cdf(1.0, 1.0, -1.0) - (2.0 * std_normal_cdf(1.0) - 1.0)).abs() < 1e-15);
        assert_eq!(bvn_cdf(-1.0, -1.0, -1.0), 0.0);
    }

    #[test]
    fn additive_over_disjoint_rectangles() {
        let spec = BvnSpec::new(0.2, -0.1, 1.5, 0.3, -0.6).unwrap();
        let whole = bvn_rect_prob(&spec, -1.0, 2.0, -0.5, 0.5).unwrap();
        let left = bvn_rect_prob(&spec, -1.0, 0.4, -0.5, 0.5).unwrap();
        let right = bvn_rect_prob(&spec, 0.4, 2.0, -0.5, 0.5).unwrap();
        assert!((whole - left - right).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let spec = BvnSpec::standard(0.0).unwrap();
        assert!(bvn_rect_prob(&spec, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BvnSpec::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BvnSpec::new(0.0, 0.0, 1.0, 1.0, 1.2).is_err());
    }
}
