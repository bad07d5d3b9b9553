//! Borrowing rules behind a common trait, looked up by name.
//!
//! Every rule maps the observed summaries to a borrowing level `a` and tests
//! with `T(a)`. What differs is how the test is calibrated: dynamic weights
//! need a parametric bootstrap, the pooling rules use a normal threshold at
//! an adjusted level, and a fixed weight uses the plain normal reference.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::borrowing::{t1_statistic, weight_logistic, weight_t, HybridData, LogisticParams, SummaryStat, WeightMethod};
use crate::decision::{adjusted_alpha_eq, adjusted_alpha_ttp, eq_pool_decision, ttp_threshold, AdjustedAlpha, DesignParams, EqConfig};
use crate::error::{Error, Result};

/// Equivalence margin used by the `eq1` / `eq2` presets.
pub const DEFAULT_EQ_DELTA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Bootstrap,
    AdjustedAlpha,
    NormalTheory,
}

pub trait BorrowingRule: Send + Sync + fmt::Debug {
    /// Registry name, e.g. `db-t` or `ttp1`.
    fn name(&self) -> &str;

    fn method(&self) -> WeightMethod;

    /// Borrowing level in [0, 1] for the observed summaries.
    fn weight(&self, data: &HybridData) -> Result<f64>;

    fn calibration(&self) -> Calibration;

    /// Two-sided adjusted level for rules that pool on a test; `None` otherwise.
    fn adjusted_alpha(&self, _design: &DesignParams, _alpha: f64) -> Result<Option<AdjustedAlpha>> {
        Ok(None)
    }

    /// Pooling decision for rules whose weight is all-or-nothing.
    fn pooled(&self, data: &HybridData) -> Result<Option<bool>> {
        if self.calibration() == Calibration::AdjustedAlpha {
            Ok(Some(self.weight(data)? == 1.0))
        } else {
            Ok(None)
        }
    }
}

#[derive(Debug, Clone)]
struct FixedRule {
    name: String,
    a: f64,
}

impl BorrowingRule for FixedRule {
    fn name(&self) -> &str {
        &self.name
    }
    fn method(&self) -> WeightMethod {
        WeightMethod::Fixed { a: self.a }
    }
    fn weight(&self, _data: &HybridData) -> Result<f64> {
        Ok(self.a)
    }
    fn calibration(&self) -> Calibration {
        Calibration::NormalTheory
    }
}

#[derive(Debug, Clone)]
struct TDensityRule {
    name: String,
}

impl BorrowingRule for TDensityRule {
    fn name(&self) -> &str {
        &self.name
    }
    fn method(&self) -> WeightMethod {
        WeightMethod::DbT
    }
    fn weight(&self, data: &HybridData) -> Result<f64> {
        let t1 = t1_statistic(&data.current_control, &data.historical_control)?;
        weight_t(t1, data.control_df())
    }
    fn calibration(&self) -> Calibration {
        Calibration::Bootstrap
    }
}

#[derive(Debug, Clone)]
struct LogisticRule {
    name: String,
    params: LogisticParams,
}

impl BorrowingRule for LogisticRule {
    fn name(&self) -> &str {
        &self.name
    }
    fn method(&self) -> WeightMethod {
        WeightMethod::DbL { params: self.params }
    }
    fn weight(&self, data: &HybridData) -> Result<f64> {
        let t1 = t1_statistic(&data.current_control, &data.historical_control)?;
        Ok(weight_logistic(t1, &self.params))
    }
    fn calibration(&self) -> Calibration {
        Calibration::Bootstrap
    }
}

#[derive(Debug, Clone)]
struct TtpRule {
    name: String,
    alpha_h1: f64,
    threshold: f64,
}

impl BorrowingRule for TtpRule {
    fn name(&self) -> &str {
        &self.name
    }
    fn method(&self) -> WeightMethod {
        WeightMethod::Ttp { alpha_h1: self.alpha_h1 }
    }
    fn weight(&self, data: &HybridData) -> Result<f64> {
        let t1 = t1_statistic(&data.current_control, &data.historical_control)?;
        Ok(if t1.abs() < self.threshold { 1.0 } else { 0.0 })
    }
    fn calibration(&self) -> Calibration {
        Calibration::AdjustedAlpha
    }
    fn adjusted_alpha(&self, design: &DesignParams, alpha: f64) -> Result<Option<AdjustedAlpha>> {
        adjusted_alpha_ttp(design, alpha, self.alpha_h1).map(Some)
    }
}

#[derive(Debug, Clone)]
struct EqRule {
    name: String,
    config: EqConfig,
}

impl BorrowingRule for EqRule {
    fn name(&self) -> &str {
        &self.name
    }
    fn method(&self) -> WeightMethod {
        WeightMethod::Eq { delta: self.config.delta, alpha_h2: self.config.alpha_h2 }
    }
    fn weight(&self, data: &HybridData) -> Result<f64> {
        let (c, h) = (&data.current_control, &data.historical_control);
        let t1 = t1_statistic(c, h)?;
        Ok(if eq_pool_decision(t1, c, h, &self.config)? { 1.0 } else { 0.0 })
    }
    fn calibration(&self) -> Calibration {
        Calibration::AdjustedAlpha
    }
    fn adjusted_alpha(&self, design: &DesignParams, alpha: f64) -> Result<Option<AdjustedAlpha>> {
        adjusted_alpha_eq(design, alpha, &self.config).map(Some)
    }
}

/// Builds the rule described by a [`WeightMethod`], named after its kind.
pub fn rule_for(method: &WeightMethod) -> Result<Arc<dyn BorrowingRule>> {
    named_rule(default_name(method), method)
}

fn default_name(method: &WeightMethod) -> &'static str {
    match method {
        WeightMethod::Fixed { .. } => "fixed",
        WeightMethod::DbT => "db-t",
        WeightMethod::DbL { params } if *params == LogisticParams::DB_L1 => "db-l1",
        WeightMethod::DbL { params } if *params == LogisticParams::DB_L2 => "db-l2",
        WeightMethod::DbL { .. } => "db-l",
        WeightMethod::Ttp { alpha_h1 } if *alpha_h1 == 0.05 => "ttp1",
        WeightMethod::Ttp { alpha_h1 } if *alpha_h1 == 0.10 => "ttp2",
        WeightMethod::Ttp { .. } => "ttp",
        WeightMethod::Eq { delta, alpha_h2 } if *delta == DEFAULT_EQ_DELTA && *alpha_h2 == 0.05 => "eq1",
        WeightMethod::Eq { delta, alpha_h2 } if *delta == DEFAULT_EQ_DELTA && *alpha_h2 == 0.10 => "eq2",
        WeightMethod::Eq { .. } => "eq",
    }
}

fn named_rule(name: &str, method: &WeightMethod) -> Result<Arc<dyn BorrowingRule>> {
    method.validate()?;
    let name = name.to_string();
    Ok(match *method {
        WeightMethod::Fixed { a } => Arc::new(FixedRule { name, a }),
        WeightMethod::DbT => Arc::new(TDensityRule { name }),
        WeightMethod::DbL { params } => Arc::new(LogisticRule { name, params }),
        WeightMethod::Ttp { alpha_h1 } => Arc::new(TtpRule { name, alpha_h1, threshold: ttp_threshold(alpha_h1)? }),
        WeightMethod::Eq { delta, alpha_h2 } => Arc::new(EqRule { name, config: EqConfig::new(delta, alpha_h2)? }),
    })
}

/// Optional knobs a factory may read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleOptions {
    pub a: Option<f64>,
    pub beta0: Option<f64>,
    pub beta1: Option<f64>,
    pub alpha_h: Option<f64>,
    pub delta: Option<f64>,
}

type Factory = Box<dyn Fn(&RuleOptions) -> Result<WeightMethod> + Send + Sync>;

struct Entry {
    description: &'static str,
    factory: Factory,
}

/// Name-keyed catalogue of borrowing rules.
pub struct Registry {
    entries: BTreeMap<String, Entry>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

fn required(v: Option<f64>, what: &str, rule: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Usage(format!("rule `{rule}` needs {what}")))
}

impl Registry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// The fixed, dynamic and test-then-pool rules, including the named presets.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("fixed", "fixed borrowing level a", |o| {
            Ok(WeightMethod::Fixed { a: required(o.a, "a", "fixed")? })
        });
        r.register("db-t", "t-density ratio weight", |_| Ok(WeightMethod::DbT));
        r.register("db-l", "logistic weight with custom beta0, beta1", |o| {
            Ok(WeightMethod::DbL {
                params: LogisticParams {
                    beta0: required(o.beta0, "beta0", "db-l")?,
                    beta1: required(o.beta1, "beta1", "db-l")?,
                },
            })
        });
        r.register("db-l1", "logistic weight, beta = (-7.379, 4.472)", |_| {
            Ok(WeightMethod::DbL { params: LogisticParams::DB_L1 })
        });
        r.register("db-l2", "logistic weight, beta = (-7.374, 3.747)", |_| {
            Ok(WeightMethod::DbL { params: LogisticParams::DB_L2 })
        });
        r.register("ttp", "test-then-pool with custom alpha_h1", |o| {
            Ok(WeightMethod::Ttp { alpha_h1: required(o.alpha_h, "alpha_h", "ttp")? })
        });
        r.register("ttp1", "test-then-pool, alpha_h1 = 0.05", |_| Ok(WeightMethod::Ttp { alpha_h1: 0.05 }));
        r.register("ttp2", "test-then-pool, alpha_h1 = 0.10", |_| Ok(WeightMethod::Ttp { alpha_h1: 0.10 }));
        r.register("eq", "equivalence test-then-pool with custom delta, alpha_h2", |o| {
            Ok(WeightMethod::Eq {
                delta: required(o.delta, "delta", "eq")?,
                alpha_h2: required(o.alpha_h, "alpha_h", "eq")?,
            })
        });
        r.register("eq1", "equivalence test-then-pool, alpha_h2 = 0.05", |o| {
            Ok(WeightMethod::Eq { delta: o.delta.unwrap_or(DEFAULT_EQ_DELTA), alpha_h2: 0.05 })
        });
        r.register("eq2", "equivalence test-then-pool, alpha_h2 = 0.10", |o| {
            Ok(WeightMethod::Eq { delta: o.delta.unwrap_or(DEFAULT_EQ_DELTA), alpha_h2: 0.10 })
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, description: &'static str, factory: F)
    where
        F: Fn(&RuleOptions) -> Result<WeightMethod> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Entry { description, factory: Box::new(factory) });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn describe(&self) -> impl Iterator<Item = (&str, &'static str)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), e.description))
    }

    /// Resolves `name` to its method configuration without building the rule.
    pub fn method(&self, name: &str, options: &RuleOptions) -> Result<WeightMethod> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Usage(format!("unknown method `{name}`")))?;
        let method = (entry.factory)(options)?;
        method.validate()?;
        Ok(method)
    }

    pub fn create(&self, name: &str, options: &RuleOptions) -> Result<Arc<dyn BorrowingRule>> {
        named_rule(name, &self.method(name, options)?)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// One point of a borrowing-level curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t1: f64,
    pub weight: f64,
}

/// Control-arm layout a weight curve is drawn for. The sds only matter to
/// the equivalence rule, whose pooling bound depends on the standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveDesign {
    pub n_c: u64,
    pub n_h: u64,
    pub sd_c: f64,
    pub sd_h: f64,
}

/// Borrowing level as a function of `T1` at each grid point.
///
/// Builds control summaries whose `T1` is the grid value and asks the rule
/// for its weight, so every rule is evaluated exactly as in an analysis.
pub fn weight_curve(rule: &dyn BorrowingRule, design: &CurveDesign, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    let current = SummaryStat::new(design.n_c, 0.0, design.sd_c)?;
    let historical = SummaryStat::new(design.n_h, 0.0, design.sd_h)?;
    let se = (current.var_of_mean() + historical.var_of_mean()).sqrt();
    if !(se > 0.0) {
        return Err(Error::DegenerateVariance("both control arms have zero sd"));
    }
    grid.iter()
        .map(|&t1| {
            if !t1.is_finite() {
                return Err(crate::error::domain("grid values must be finite"));
            }
            let data = HybridData {
                treatment: current,
                current_control: SummaryStat { mean: t1 * se, ..current },
                historical_control: historical,
            };
            Ok(CurvePoint { t1, weight: rule.weight(&data)? })
        })
        .collect()
}

/// `from, from + step, ...` up to `to` (inclusive within a tolerance of step / 1e6).
pub fn linear_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(from.is_finite() && to.is_finite() && step > 0.0 && step.is_finite()) || to < from {
        return Err(crate::error::domain("grid needs finite from <= to and step > 0"));
    }
    let n = ((to - from) / step + 1e-6).floor() as usize;
    if n > 100_000 {
        return Err(crate::error::domain("grid has more than 100000 points"));
    }
    // round to 12 decimals so 0.05 steps print as 0.05, not 0.05000000000000071
    Ok((0..=n).map(|i| ((from + i as f64 * step) * 1e12).round() / 1e12).collect())
}

/// The seven methods compared in the operating-characteristics study.
pub const STUDY_METHODS: [&str; 7] = ["db-t", "db-l1", "db-l2", "ttp1", "ttp2", "eq1", "eq2"];
