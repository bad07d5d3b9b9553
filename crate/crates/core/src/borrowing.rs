//! Data model and borrowing statistics.
//!
//! A hybrid control analysis compares a treatment arm against a control mean
//! that pools the current control arm with a fraction `a` of a historical
//! control arm. The similarity statistic `T1` between the two control arms
//! decides how large `a` should be.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::t_density_ratio;

/// Sufficient statistics of one arm: size, mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub n: u64,
    pub mean: f64,
    pub sd: f64,
}

impl SummaryStat {
    pub fn new(n: u64, mean: f64, sd: f64) -> Result<Self> {
        let s = Self { n, mean, sd };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(domain(format!("arm size must be at least 2, got {}", self.n)));
        }
        if !self.mean.is_finite() {
            return Err(domain("arm mean must be finite"));
        }
        if !(self.sd >= 0.0 && self.sd.is_finite()) {
            return Err(domain(format!("arm sd must be finite and >= 0, got {}", self.sd)));
        }
        Ok(())
    }

    /// Reduces individual observations to mean and (n - 1) standard deviation.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(domain(format!("need at least 2 observations, got {n}")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        Self::new(n as u64, mean, (ss / (n - 1) as f64).sqrt())
    }

    /// Squared standard error of the mean, `sd^2 / n`.
    #[inline]
    pub fn var_of_mean(&self) -> f64 {
        self.sd * self.sd / self.n as f64
    }
}

/// Treatment, current control and historical control arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridData {
    pub treatment: SummaryStat,
    pub current_control: SummaryStat,
    pub historical_control: SummaryStat,
}

impl HybridData {
    pub fn new(
        treatment: SummaryStat,
        current_control: SummaryStat,
        historical_control: SummaryStat,
    ) -> Result<Self> {
        let d = Self { treatment, current_control, historical_control };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.treatment.validate()?;
        self.current_control.validate()?;
        self.historical_control.validate()
    }

    /// Degrees of freedom used by the t-density weight, `n_c + n_h - 2`.
    pub fn control_df(&self) -> u64 {
        self.current_control.n + self.historical_control.n - 2
    }

    /// The major depressive disorder reanalysis: paroxetine and placebo arms of
    /// study 061 with the placebo arm of study 059 as historical control.
    pub fn case_study() -> Self {
        Self {
            treatment: SummaryStat { n: 137, mean: -9.9, sd: 7.9 },
            current_control: SummaryStat { n: 140, mean: -8.7, sd: 7.3 },
            historical_control: SummaryStat { n: 149, mean: -8.1, sd: 8.3 },
        }
    }
}

/// Intercept and slope of the logistic borrowing curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta0: f64,
    pub beta1: f64,
}

impl LogisticParams {
    /// Half borrowing near |T1| = 1.65, one fifth at 1.96.
    pub const DB_L1: Self = Self { beta0: -7.379, beta1: 4.472 };
    /// Half borrowing at |T1| = 1.96, one fifth at 2.33.
    pub const DB_L2: Self = Self { beta0: -7.374, beta1: 3.747 };

    pub fn new(beta0: f64, beta1: f64) -> Result<Self> {
        let p = Self { beta0, beta1 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta0.is_finite() || !self.beta1.is_finite() {
            return Err(domain("logistic parameters must be finite"));
        }
        if self.beta1 < 0.0 {
            return Err(domain(format!(
                "logistic slope must be >= 0 so borrowing falls with |T1|, got {}",
                self.beta1
            )));
        }
        Ok(())
    }
}

/// Which rule sets the borrowing level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightMethod {
    /// A fixed borrowing level `a`.
    Fixed { a: f64 },
    /// t-density ratio on `n_c + n_h - 2` degrees of freedom.
    DbT,
    /// Logistic function of |T1|.
    DbL { params: LogisticParams },
    /// Test-then-pool: borrow fully unless the control arms differ at level `alpha_h1`.
    Ttp { alpha_h1: f64 },
    /// Equivalence test-then-pool with margin `delta` at level `alpha_h2`.
    Eq { delta: f64, alpha_h2: f64 },
}

impl WeightMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightMethod::Fixed { a } => check_weight(a),
            WeightMethod::DbT => Ok(()),
            WeightMethod::DbL { params } => params.validate(),
            WeightMethod::Ttp { alpha_h1 } => check_open_unit("alpha_h1", alpha_h1),
            WeightMethod::Eq { delta, alpha_h2 } => {
                if !(delta > 0.0) {
                    return Err(domain(format!("equivalence margin must be > 0, got {delta}")));
                }
                check_open_unit("alpha_h2", alpha_h2)
            }
        }
    }

    /// Whether the weight is a continuous function of T1 (bootstrap-calibrated).
    pub fn is_dynamic(&self) -> bool {
        matches!(self, WeightMethod::DbT | WeightMethod::DbL { .. })
    }
}

pub(crate) fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn check_weight(a: f64) -> Result<()> {
    if (0.0..=1.0).contains(&a) {
        Ok(())
    } else {
        Err(domain(format!("borrowing level must lie in [0, 1], got {a}")))
    }
}

/// Standardized difference between the current and historical control means.
pub fn t1_statistic(current: &SummaryStat, historical: &SummaryStat) -> Result<f64> {
    let var = current.var_of_mean() + historical.var_of_mean();
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance("both control arms have zero sd"));
    }
    Ok((current.mean - historical.mean) / var.sqrt())
}

/// Treatment-versus-pooled-control z statistic at borrowing level `a`.
pub fn pooled_statistic(data: &HybridData, a: f64) -> Result<f64> {
    check_weight(a)?;
    let t = pooled_statistic_unchecked(data, a);
    if t.is_nan() {
        return Err(Error::DegenerateVariance("pooled statistic has zero variance"));
    }
    Ok(t)
}

/// Hot-loop form of [`pooled_statistic`]; NaN when the variance vanishes.
#[inline]
pub(crate) fn pooled_statistic_unchecked(data: &HybridData, a: f64) -> f64 {
    let (t, c, h) = (&data.treatment, &data.current_control, &data.historical_control);
    let nc = c.n as f64;
    let anh = a * h.n as f64;
    let denom_n = nc + anh;
    let pooled_mean = (nc * c.mean + anh * h.mean) / denom_n;
    let pooled_var = (nc * c.sd * c.sd + a * anh * h.sd * h.sd) / (denom_n * denom_n);
    let var = t.var_of_mean() + pooled_var;
    if var > 0.0 {
        (t.mean - pooled_mean) / var.sqrt()
    } else {
        f64::NAN
    }
}

/// t-density borrowing level `f(|t1|) / f(0)`.
pub fn weight_t(t1: f64, df: u64) -> Result<f64> {
    t_density_ratio(t1.abs(), df)
}

/// Logistic borrowing level `1 / (1 + exp(beta0 + beta1 |t1|))`.
pub fn weight_logistic(t1: f64, params: &LogisticParams) -> f64 {
    1.0 / (1.0 + (params.beta0 + params.beta1 * t1.abs()).exp())
}

/// A `(|T1|, weight)` pair the logistic curve must pass through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub t: f64,
    pub weight: f64,
}

/// Result of solving for logistic parameters from two anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta0: f64,
    pub beta1: f64,
    /// Set when the anchors imply borrowing that grows with |T1|.
    pub non_monotone: bool,
}

impl LogisticFit {
    pub fn params(&self) -> Result<LogisticParams> {
        LogisticParams::new(self.beta0, self.beta1)
    }
}

/// Solves `beta0 + beta1 t_i = ln(1 / w_i - 1)` for two anchors.
pub fn fit_logistic_params(first: Anchor, second: Anchor) -> Result<LogisticFit> {
    for anchor in [first, second] {
        if !(anchor.t >= 0.0 && anchor.t.is_finite()) {
            return Err(domain(format!("anchor t must be finite and >= 0, got {}", anchor.t)));
        }
        check_open_unit("anchor weight", anchor.weight)?;
    }
    if first.t == second.t {
        return Err(Error::SingularSystem);
    }
    let logit = |w: f64| (1.0 / w - 1.0).ln();
    let (y1, y2) = (logit(first.weight), logit(second.weight));
    let beta1 = (y2 - y1) / (second.t - first.t);
    let beta0 = y1 - beta1 * first.t;
    Ok(LogisticFit { beta0, beta1, non_monotone: beta1 < 0.0 })
}
