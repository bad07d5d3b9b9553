//! Test-then-pool decisions and their adjusted significance levels.
//!
//! Both pooling procedures test the primary hypothesis with `T(1)` when the
//! controls look exchangeable and with `T(0)` otherwise. The overall type 1
//! error of that two-branch procedure is
//!
//! ```text
//! P(|T(1)| > z*, pool) + P(|T(0)| > z*, no pool)
//! ```
//!
//! with `z* = z_{1 - alpha*/2}`. Under known variances `T(1)`, `T(0)` and the
//! control mean difference `Y2 = xbar_c - xbar_h` are jointly normal, so each
//! piece is a bivariate normal rectangle. The adjusted level `alpha*` is the
//! root that makes the sum equal the nominal `alpha`.

use serde::{Deserialize, Serialize};

use crate::borrowing::{check_open_unit, HybridData, SummaryStat};
use crate::error::{domain, Error, Result};
use crate::numerics::{brent, bvn_rect_prob, std_normal_quantile, BvnSpec};

const INF: f64 = f64::INFINITY;
const MONOTONE_GRID: usize = 64;

/// True design parameters used to calibrate the pooling procedures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub n_t: u64,
    pub n_c: u64,
    pub n_h: u64,
    pub sigma_t: f64,
    pub sigma_c: f64,
    pub sigma_h: f64,
    /// `mu_c - mu_h`.
    #[serde(default)]
    pub mu_diff: f64,
}

impl DesignParams {
    pub fn new(n_t: u64, n_c: u64, n_h: u64, sigma_t: f64, sigma_c: f64, sigma_h: f64, mu_diff: f64) -> Result<Self> {
        let d = Self { n_t, n_c, n_h, sigma_t, sigma_c, sigma_h, mu_diff };
        d.validate()?;
        Ok(d)
    }

    /// Equal variances across the three arms, given as a variance (not a standard deviation).
    pub fn with_common_variance(n_t: u64, n_c: u64, n_h: u64, variance: f64, mu_diff: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(domain(format!("variance must be > 0, got {variance}")));
        }
        let s = variance.sqrt();
        Self::new(n_t, n_c, n_h, s, s, s, mu_diff)
    }

    /// Plug-in design taken from observed summaries, with no control drift.
    pub fn from_data(data: &HybridData) -> Result<Self> {
        let (t, c, h) = (&data.treatment, &data.current_control, &data.historical_control);
        Self::new(t.n, c.n, h.n, t.sd, c.sd, h.sd, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 || self.n_c < 2 || self.n_h < 2 {
            return Err(domain("design sample sizes must all be >= 2"));
        }
        for (name, s) in [("sigma_t", self.sigma_t), ("sigma_c", self.sigma_c), ("sigma_h", self.sigma_h)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(domain(format!("{name} must be finite and > 0, got {s}")));
            }
        }
        if !self.mu_diff.is_finite() {
            return Err(domain("mu_diff must be finite"));
        }
        Ok(())
    }

    fn var_c(&self) -> f64 {
        self.sigma_c * self.sigma_c / self.n_c as f64
    }

    fn var_h(&self) -> f64 {
        self.sigma_h * self.sigma_h / self.n_h as f64
    }

    /// Variance of `xbar_c - xbar_h`.
    pub fn control_diff_var(&self) -> f64 {
        self.var_c() + self.var_h()
    }
}

/// Equivalence margin and level for the equivalence-based pooling test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqConfig {
    pub delta: f64,
    pub alpha_h2: f64,
}

impl EqConfig {
    pub fn new(delta: f64, alpha_h2: f64) -> Result<Self> {
        let c = Self { delta, alpha_h2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(domain(format!("equivalence margin must be finite and > 0, got {}", self.delta)));
        }
        check_open_unit("alpha_h2", self.alpha_h2)
    }
}

/// `z_{1 - alpha_h1/2}`: TTP pools when |T1| is strictly below it.
pub fn ttp_threshold(alpha_h1: f64) -> Result<f64> {
    check_open_unit("alpha_h1", alpha_h1)?;
    std_normal_quantile(1.0 - alpha_h1 / 2.0)
}

pub fn ttp_pool_decision(t1: f64, alpha_h1: f64) -> Result<bool> {
    Ok(t1.abs() < ttp_threshold(alpha_h1)?)
}

/// Upper |T1| bound of the equivalence pooling region,
/// `delta / sqrt(s_c^2/n_c + s_h^2/n_h) - z_{1 - alpha_h2}`.
///
/// The region is symmetric in T1; a non-positive bound means it is empty.
pub fn eq_threshold(current: &SummaryStat, historical: &SummaryStat, config: &EqConfig) -> Result<f64> {
    config.validate()?;
    let se = (current.var_of_mean() + historical.var_of_mean()).sqrt();
    if !(se > 0.0) {
        return Err(Error::DegenerateVariance("both control arms have zero sd"));
    }
    Ok(config.delta / se - std_normal_quantile(1.0 - config.alpha_h2)?)
}

pub fn eq_pool_decision(t1: f64, current: &SummaryStat, historical: &SummaryStat, config: &EqConfig) -> Result<bool> {
    let bound = eq_threshold(current, historical, config)?;
    Ok(bound > 0.0 && t1.abs() < bound)
}

/// Outcome of an adjusted-alpha solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedAlpha {
    pub alpha: f64,
    pub alpha_star: f64,
    /// `alpha - overall_rejection(alpha_star)`.
    pub residual: f64,
    /// Half-width of the pooling interval on the `xbar_c - xbar_h` scale (0 when empty).
    pub pool_halfwidth: f64,
}

/// Joint laws of `(T(1) - shift, Y2)` and `(T(0), Y2)` under the primary null.
#[derive(Debug, Clone, Copy)]
struct BranchLaws {
    pooled: BvnSpec,
    pooled_shift: f64,
    separate: BvnSpec,
}

impl BranchLaws {
    fn new(d: &DesignParams) -> Result<Self> {
        let (nc, nh) = (d.n_c as f64, d.n_h as f64);
        let n_pool = nc + nh;
        let var_t = d.sigma_t * d.sigma_t / d.n_t as f64;
        let (sc2, sh2) = (d.sigma_c * d.sigma_c, d.sigma_h * d.sigma_h);
        let v2 = d.control_diff_var();

        let sd_pooled = (var_t + (nc * sc2 + nh * sh2) / (n_pool * n_pool)).sqrt();
        let cov_pooled = (sh2 - sc2) / n_pool / sd_pooled;
        let pooled = BvnSpec::from_covariance(0.0, d.mu_diff, 1.0, v2, cov_pooled)?;
        let pooled_shift = nh * d.mu_diff / n_pool / sd_pooled;

        let sd_separate = (var_t + d.var_c()).sqrt();
        let cov_separate = -d.var_c() / sd_separate;
        let separate = BvnSpec::from_covariance(0.0, d.mu_diff, 1.0, v2, cov_separate)?;
        Ok(Self { pooled, pooled_shift, separate })
    }

    /// Overall two-sided rejection probability at per-branch level `alpha_star`.
    fn overall_rejection(&self, alpha_star: f64, halfwidth: f64) -> Result<f64> {
        let z = std_normal_quantile(1.0 - alpha_star / 2.0)?;
        let (lo2, hi2) = (-halfwidth, halfwidth);
        // both tails of |Y1 + shift| > z, computed separately so a non-zero shift stays exact
        let s = self.pooled_shift;
        let pooled_reject = bvn_rect_prob(&self.pooled, z - s, INF, lo2, hi2)?
            + bvn_rect_prob(&self.pooled, -INF, -z - s, lo2, hi2)?;
        let separate_reject_while_pooling = bvn_rect_prob(&self.separate, z, INF, lo2, hi2)?
            + bvn_rect_prob(&self.separate, -INF, -z, lo2, hi2)?;
        Ok(pooled_reject + alpha_star - separate_reject_while_pooling)
    }
}

/// Overall two-sided type 1 error of TTP run at per-branch level `alpha_star`.
pub fn ttp_overall_rejection(design: &DesignParams, alpha_star: f64, alpha_h1: f64) -> Result<f64> {
    design.validate()?;
    check_open_unit("alpha_star", alpha_star)?;
    let c = ttp_threshold(alpha_h1)? * design.control_diff_var().sqrt();
    BranchLaws::new(design)?.overall_rejection(alpha_star, c)
}

/// Overall two-sided type 1 error of the equivalence procedure at level `alpha_star`.
pub fn eq_overall_rejection(design: &DesignParams, alpha_star: f64, config: &EqConfig) -> Result<f64> {
    design.validate()?;
    check_open_unit("alpha_star", alpha_star)?;
    let c = eq_halfwidth(design, config)?;
    BranchLaws::new(design)?.overall_rejection(alpha_star, c)
}

fn eq_halfwidth(design: &DesignParams, config: &EqConfig) -> Result<f64> {
    config.validate()?;
    let c = config.delta - std_normal_quantile(1.0 - config.alpha_h2)? * design.control_diff_var().sqrt();
    Ok(c.max(0.0))
}

pub fn adjusted_alpha_ttp(design: &DesignParams, alpha: f64, alpha_h1: f64) -> Result<AdjustedAlpha> {
    design.validate()?;
    check_open_unit("alpha", alpha)?;
    let c = ttp_threshold(alpha_h1)? * design.control_diff_var().sqrt();
    solve(design, alpha, c)
}

pub fn adjusted_alpha_eq(design: &DesignParams, alpha: f64, config: &EqConfig) -> Result<AdjustedAlpha> {
    design.validate()?;
    check_open_unit("alpha", alpha)?;
    let c = eq_halfwidth(design, config)?;
    if c == 0.0 {
        // empty pooling region: the procedure is the plain T(0) test
        return Ok(AdjustedAlpha { alpha, alpha_star: alpha, residual: 0.0, pool_halfwidth: 0.0 });
    }
    solve(design, alpha, c)
}

fn solve(design: &DesignParams, alpha: f64, halfwidth: f64) -> Result<AdjustedAlpha> {
    let laws = BranchLaws::new(design)?;
    let residual = |a: f64| laws.overall_rejection(a, halfwidth).map(|r| alpha - r);

    let lo = alpha / 10.0;
    let hi = (10.0 * alpha).min(1.0 - 1e-12);
    let mut prev = residual(lo)?;
    for i in 1..=MONOTONE_GRID {
        let x = lo + (hi - lo) * i as f64 / MONOTONE_GRID as f64;
        let r = residual(x)?;
        if r > prev + 1e-12 {
            return Err(Error::NumericalFailure(format!(
                "adjusted-alpha residual is not decreasing near alpha* = {x}"
            )));
        }
        prev = r;
    }

    let mut failure = None;
    let root = brent(
        |a| match residual(a) {
            Ok(r) => r,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        lo,
        hi,
        1e-15,
        1e-12,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let alpha_star = root.map_err(|e| match e {
        Error::Bracket { .. } => Error::NumericalFailure(format!(
            "no adjusted alpha in [{lo}, {hi}] for nominal alpha {alpha}"
        )),
        other => other,
    })?;
    let r = residual(alpha_star)?;
    if r.abs() > 1e-8 {
        return Err(Error::NumericalFailure(format!("adjusted alpha residual {r:e} exceeds 1e-8")));
    }
    Ok(AdjustedAlpha { alpha, alpha_star, residual: r, pool_halfwidth: halfwidth })
}
