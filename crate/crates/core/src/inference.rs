//! Hypothesis tests for the treatment effect.
//!
//! Dynamic-weight statistics are referred to a parametric bootstrap null built
//! from sufficient statistics: a replicate arm mean is normal and its variance
//! a scaled chi-square, which is exactly the law of n normal draws.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::borrowing::{check_open_unit, pooled_statistic, pooled_statistic_unchecked, HybridData, SummaryStat};
use crate::decision::DesignParams;
use crate::error::{domain, Error, Result};
use crate::numerics::{std_normal_cdf, std_normal_quantile, std_normal_sf};
use crate::rng::StreamKey;
use crate::strategy::{BorrowingRule, Calibration};

pub const MIN_BOOTSTRAP_REPS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    OneSidedLower,
    OneSidedUpper,
    TwoSided,
}

impl Sidedness {
    /// Normal-reference p-value of `stat`.
    pub fn normal_p(self, stat: f64) -> f64 {
        match self {
            Self::OneSidedLower => std_normal_cdf(stat),
            Self::OneSidedUpper => std_normal_sf(stat),
            Self::TwoSided => (2.0 * std_normal_sf(stat.abs())).min(1.0),
        }
    }

    /// Critical value of a normal test at `alpha`; for two-sided tests the positive cut-off of |T|.
    pub fn normal_critical(self, alpha: f64) -> Result<f64> {
        match self {
            Self::OneSidedLower => std_normal_quantile(alpha),
            Self::OneSidedUpper => std_normal_quantile(1.0 - alpha),
            Self::TwoSided => std_normal_quantile(1.0 - alpha / 2.0),
        }
    }

    /// Whether `stat` lies strictly beyond `critical`.
    pub fn beyond(self, stat: f64, critical: f64) -> bool {
        match self {
            Self::OneSidedLower => stat < critical,
            Self::OneSidedUpper => stat > critical,
            Self::TwoSided => stat.abs() > critical,
        }
    }

    /// The two-sided level with the same per-tail error as `alpha` at this sidedness.
    pub fn two_sided_level(self, alpha: f64) -> f64 {
        match self {
            Self::TwoSided => alpha,
            _ => 2.0 * alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b_reps: u64,
    pub seed: u64,
    #[serde(default)]
    pub mu_hat: f64,
    pub sidedness: Sidedness,
    pub alpha: f64,
}

impl BootstrapConfig {
    pub fn new(b_reps: u64, seed: u64, sidedness: Sidedness, alpha: f64) -> Result<Self> {
        let c = Self { b_reps, seed, mu_hat: 0.0, sidedness, alpha };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_reps < MIN_BOOTSTRAP_REPS {
            return Err(domain(format!("b_reps must be >= {MIN_BOOTSTRAP_REPS}, got {}", self.b_reps)));
        }
        if !self.mu_hat.is_finite() {
            return Err(domain("mu_hat must be finite"));
        }
        check_open_unit("alpha", self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub method: String,
    pub calibration: Calibration,
    pub sidedness: Sidedness,
    pub weight: f64,
    pub statistic: f64,
    /// Rejection boundary on the statistic scale; the |T| cut-off when two-sided.
    pub critical_value: f64,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled: Option<bool>,
    pub alpha: f64,
    /// Level the decision was actually taken at (the adjusted level for pooling rules).
    pub alpha_used: f64,
    pub rejected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_reps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
struct ArmSampler {
    n: u64,
    se: f64,
    sd: f64,
    chi: ChiSquared<f64>,
    dof: f64,
}

impl ArmSampler {
    fn new(arm: &SummaryStat) -> Result<Self> {
        arm.validate()?;
        let dof = (arm.n - 1) as f64;
        let chi = ChiSquared::new(dof).map_err(|e| domain(e.to_string()))?;
        Ok(Self { n: arm.n, se: arm.var_of_mean().sqrt(), sd: arm.sd, chi, dof })
    }

    #[inline]
    fn draw<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> SummaryStat {
        let z: f64 = rng.sample(StandardNormal);
        let q = self.chi.sample(rng);
        SummaryStat { n: self.n, mean: mu + self.se * z, sd: self.sd * (q / self.dof).sqrt() }
    }
}

/// Draws replicate summaries for three arms sharing one mean, keeping each arm's size and sd.
#[derive(Debug, Clone, Copy)]
pub struct NullSampler {
    arms: [ArmSampler; 3],
    mu: f64,
}

impl NullSampler {
    pub fn new(data: &HybridData, mu_hat: f64) -> Result<Self> {
        if !mu_hat.is_finite() {
            return Err(domain("mu_hat must be finite"));
        }
        Ok(Self {
            arms: [
                ArmSampler::new(&data.treatment)?,
                ArmSampler::new(&data.current_control)?,
                ArmSampler::new(&data.historical_control)?,
            ],
            mu: mu_hat,
        })
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> HybridData {
        self.draw_at([self.mu; 3], rng)
    }

    /// Like [`NullSampler::draw`] with a separate mean per arm.
    #[inline]
    pub fn draw_at<R: Rng + ?Sized>(&self, means: [f64; 3], rng: &mut R) -> HybridData {
        HybridData {
            treatment: self.arms[0].draw(means[0], rng),
            current_control: self.arms[1].draw(means[1], rng),
            historical_control: self.arms[2].draw(means[2], rng),
        }
    }
}

/// One null replicate of `data` centred at `mu_hat`.
pub fn draw_null_replicate<R: Rng + ?Sized>(data: &HybridData, mu_hat: f64, rng: &mut R) -> Result<HybridData> {
    Ok(NullSampler::new(data, mu_hat)?.draw(rng))
}

fn replicate_statistics(
    sampler: &NullSampler,
    rules: &[&dyn BorrowingRule],
    key: StreamKey,
    b: u64,
    out: &mut [f64],
) -> Result<()> {
    let rep = sampler.draw(&mut key.stream(b));
    for (slot, rule) in out.iter_mut().zip(rules) {
        let t = pooled_statistic_unchecked(&rep, rule.weight(&rep)?);
        if t.is_nan() {
            return Err(Error::DegenerateVariance("bootstrap replicate has zero variance"));
        }
        *slot = t;
    }
    Ok(())
}

/// Null statistics for several rules over the same `b_reps` replicates.
///
/// Returns one vector per rule, in replicate order. Replicate `b` always uses
/// stream `b` of `key`, so the parallel and serial paths agree bit for bit.
pub fn null_distributions(
    sampler: &NullSampler,
    rules: &[&dyn BorrowingRule],
    key: StreamKey,
    b_reps: u64,
    parallel: bool,
) -> Result<Vec<Vec<f64>>> {
    let k = rules.len();
    let mut flat = vec![0.0; k * b_reps as usize];
    if k == 0 {
        return Ok(Vec::new());
    }
    if parallel {
        flat.par_chunks_mut(k)
            .enumerate()
            .try_for_each(|(b, out)| replicate_statistics(sampler, rules, key, b as u64, out))?;
    } else {
        for (b, out) in flat.chunks_mut(k).enumerate() {
            replicate_statistics(sampler, rules, key, b as u64, out)?;
        }
    }
    Ok((0..k).map(|j| flat.iter().skip(j).step_by(k).copied().collect()).collect())
}

/// Order statistic at rank `ceil(q B)` (1-based) of the sorted sample.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    // guard against q B landing a hair above an integer
    let rank = ((q * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    sorted[rank - 1]
}

/// Bootstrap critical value and p-value of `observed` against the null sample `stats`.
pub fn bootstrap_summary(observed: f64, stats: &mut [f64], sidedness: Sidedness, alpha: f64) -> (f64, f64) {
    let b = stats.len() as f64;
    let (count, critical) = match sidedness {
        Sidedness::OneSidedLower => {
            let c = stats.iter().filter(|&&t| t <= observed).count();
            stats.sort_by(f64::total_cmp);
            (c, empirical_quantile(stats, alpha))
        }
        Sidedness::OneSidedUpper => {
            let c = stats.iter().filter(|&&t| t >= observed).count();
            stats.sort_by(f64::total_cmp);
            (c, empirical_quantile(stats, 1.0 - alpha))
        }
        Sidedness::TwoSided => {
            let abs_obs = observed.abs();
            stats.iter_mut().for_each(|t| *t = t.abs());
            let c = stats.iter().filter(|&&t| t >= abs_obs).count();
            stats.sort_by(f64::total_cmp);
            (c, empirical_quantile(stats, 1.0 - alpha))
        }
    };
    (critical, count as f64 / b)
}

/// Parametric bootstrap test of `T(a)` where `a` is the rule's weight.
///
/// Rejects when the bootstrap p-value is at most `alpha`.
pub fn bootstrap_test(data: &HybridData, rule: &dyn BorrowingRule, config: &BootstrapConfig) -> Result<TestOutcome> {
    config.validate()?;
    data.validate()?;
    if rule.calibration() == Calibration::AdjustedAlpha {
        return Err(Error::Usage(format!(
            "`{}` pools on a preliminary test and is calibrated by an adjusted alpha, not a bootstrap",
            rule.name()
        )));
    }
    let weight = rule.weight(data)?;
    let statistic = pooled_statistic(data, weight)?;
    let sampler = NullSampler::new(data, config.mu_hat)?;
    let mut stats = null_distributions(&sampler, &[rule], StreamKey::new(config.seed), config.b_reps, true)?
        .pop()
        .unwrap_or_default();
    let (critical_value, p_value) = bootstrap_summary(statistic, &mut stats, config.sidedness, config.alpha);
    Ok(TestOutcome {
        method: rule.name().to_string(),
        calibration: Calibration::Bootstrap,
        sidedness: config.sidedness,
        weight,
        statistic,
        critical_value,
        p_value,
        pooled: None,
        alpha: config.alpha,
        alpha_used: config.alpha,
        rejected: p_value <= config.alpha,
        b_reps: Some(config.b_reps),
        seed: Some(config.seed),
    })
}

/// Test-then-pool style test against a normal threshold at the adjusted level.
///
/// One-sided tests at `alpha` use the two-sided adjustment at `2 alpha` and
/// put half of the adjusted level in the tested tail.
pub fn ttp_eq_test(
    data: &HybridData,
    rule: &dyn BorrowingRule,
    design: &DesignParams,
    alpha: f64,
    sidedness: Sidedness,
) -> Result<TestOutcome> {
    data.validate()?;
    check_open_unit("alpha", alpha)?;
    let level = sidedness.two_sided_level(alpha);
    check_open_unit("two-sided equivalent alpha", level)?;
    let adjusted = rule.adjusted_alpha(design, level)?.ok_or_else(|| {
        Error::Usage(format!("`{}` has no adjusted-alpha calibration", rule.name()))
    })?;
    let alpha_used = match sidedness {
        Sidedness::TwoSided => adjusted.alpha_star,
        _ => adjusted.alpha_star / 2.0,
    };
    let weight = rule.weight(data)?;
    let statistic = pooled_statistic(data, weight)?;
    let critical_value = sidedness.normal_critical(alpha_used)?;
    Ok(TestOutcome {
        method: rule.name().to_string(),
        calibration: Calibration::AdjustedAlpha,
        sidedness,
        weight,
        statistic,
        critical_value,
        p_value: sidedness.normal_p(statistic),
        pooled: Some(weight == 1.0),
        alpha,
        alpha_used,
        rejected: sidedness.beyond(statistic, critical_value),
        b_reps: None,
        seed: None,
    })
}

/// Normal-reference test of `T(a)` with a weight that does not depend on the data.
pub fn z_test(data: &HybridData, rule: &dyn BorrowingRule, alpha: f64, sidedness: Sidedness) -> Result<TestOutcome> {
    data.validate()?;
    check_open_unit("alpha", alpha)?;
    if rule.calibration() != Calibration::NormalTheory {
        return Err(Error::Usage(format!("`{}` has a data-dependent weight; use the bootstrap", rule.name())));
    }
    let weight = rule.weight(data)?;
    let statistic = pooled_statistic(data, weight)?;
    let critical_value = sidedness.normal_critical(alpha)?;
    Ok(TestOutcome {
        method: rule.name().to_string(),
        calibration: Calibration::NormalTheory,
        sidedness,
        weight,
        statistic,
        critical_value,
        p_value: sidedness.normal_p(statistic),
        pooled: None,
        alpha,
        alpha_used: alpha,
        rejected: sidedness.beyond(statistic, critical_value),
        b_reps: None,
        seed: None,
    })
}

/// Runs the test matching the rule's calibration.
///
/// Pooling rules without an explicit design are calibrated at the plug-in
/// design built from the observed sizes and sds.
pub fn run_test(
    data: &HybridData,
    rule: &dyn BorrowingRule,
    config: &BootstrapConfig,
    design: Option<&DesignParams>,
) -> Result<TestOutcome> {
    match rule.calibration() {
        Calibration::Bootstrap => bootstrap_test(data, rule, config),
        Calibration::NormalTheory => z_test(data, rule, config.alpha, config.sidedness),
        Calibration::AdjustedAlpha => {
            let design = match design {
                Some(d) => *d,
                None => DesignParams::from_data(data)?,
            };
            ttp_eq_test(data, rule, &design, config.alpha, config.sidedness)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::borrowing::{LogisticParams, WeightMethod};
    use crate::strategy::rule_for;

    fn cfg(b: u64, seed: u64, sidedness: Sidedness) -> BootstrapConfig {
        BootstrapConfig::new(b, seed, sidedness, 0.05).unwrap()
    }

    #[test]
    fn quantile_convention() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&s, 0.05), 5.0);
        assert_eq!(empirical_quantile(&s, 0.951), 96.0);
        assert_eq!(empirical_quantile(&s, 0.95), 95.0);
        assert_eq!(empirical_quantile(&s, 0.0), 1.0);
        assert_eq!(empirical_quantile(&s, 1.0), 100.0);
    }

    #[test]
    fn summary_counts_directional_tails() {
        let base: Vec<f64> = (-50..50).map(|i| i as f64 / 10.0).collect();
        let (c, p) = bootstrap_summary(-4.55, &mut base.clone(), Sidedness::OneSidedLower, 0.05);
        assert_eq!((c, p), (-4.6, 0.05));
        let (c, p) = bootstrap_summary(4.45, &mut base.clone(), Sidedness::OneSidedUpper, 0.05);
        assert_eq!((c, p), (4.4, 0.05));
        let (c, p) = bootstrap_summary(-4.5, &mut base.clone(), Sidedness::TwoSided, 0.1);
        assert_eq!(p, 0.11);
        assert_eq!(c, 4.5);
    }

    #[test]
    fn null_center_gives_two_sided_p_near_one() {
        let mut d = HybridData::case_study();
        let a = 0.7;
        let (c, h) = (d.current_control, d.historical_control);
        let anh = a * h.n as f64;
        d.treatment.mean = (c.n as f64 * c.mean + anh * h.mean) / (c.n as f64 + anh);
        let rule = rule_for(&WeightMethod::Fixed { a }).unwrap();
        let out = bootstrap_test(&d, rule.as_ref(), &cfg(2_000, 3, Sidedness::TwoSided)).unwrap();
        assert!(out.statistic.abs() < 1e-12);
        assert!(out.p_value > 1.0 - 2.0 / 2000f64.sqrt(), "p = {}", out.p_value);
    }

    #[test]
    fn deterministic_and_granular() {
        let d = HybridData::case_study();
        let rule = rule_for(&WeightMethod::DbL { params: LogisticParams::DB_L1 }).unwrap();
        let c = cfg(500, 11, Sidedness::OneSidedLower);
        let a = bootstrap_test(&d, rule.as_ref(), &c).unwrap();
        let b = bootstrap_test(&d, rule.as_ref(), &c).unwrap();
        assert_eq!(a, b);
        let scaled = a.p_value * 500.0;
        assert_eq!(scaled, scaled.round());
        let other = bootstrap_test(&d, rule.as_ref(), &cfg(500, 12, Sidedness::OneSidedLower)).unwrap();
        assert_ne!(a.critical_value, other.critical_value);
    }

    #[test]
    fn parallel_matches_serial() {
        let d = HybridData::case_study();
        let rules = [rule_for(&WeightMethod::DbT).unwrap(), rule_for(&WeightMethod::Fixed { a: 0.2 }).unwrap()];
        let refs: Vec<&dyn BorrowingRule> = rules.iter().map(|r| r.as_ref()).collect();
        let s = NullSampler::new(&d, 0.0).unwrap();
        let key = StreamKey::new(99);
        let a = null_distributions(&s, &refs, key, 300, true).unwrap();
        let b = null_distributions(&s, &refs, key, 300, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].len(), 300);
    }

    #[test]
    fn bad_configs() {
        let d = HybridData::case_study();
        let rule = rule_for(&WeightMethod::DbT).unwrap();
        assert!(BootstrapConfig::new(99, 1, Sidedness::TwoSided, 0.05).is_err());
        assert!(BootstrapConfig::new(100, 1, Sidedness::TwoSided, 1.0).is_err());
        let ttp = rule_for(&WeightMethod::Ttp { alpha_h1: 0.05 }).unwrap();
        let c = cfg(100, 1, Sidedness::TwoSided);
        assert!(matches!(bootstrap_test(&d, ttp.as_ref(), &c), Err(Error::Usage(_))));
        assert!(matches!(z_test(&d, rule.as_ref(), 0.05, Sidedness::TwoSided), Err(Error::Usage(_))));
        let mut flat = d;
        flat.current_control.sd = 0.0;
        flat.historical_control.sd = 0.0;
        assert!(matches!(bootstrap_test(&flat, rule.as_ref(), &c), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn no_borrow_normal_p() {
        let rule = rule_for(&WeightMethod::Fixed { a: 0.0 }).unwrap();
        let out = z_test(&HybridData::case_study(), rule.as_ref(), 0.05, Sidedness::OneSidedLower).unwrap();
        assert!((out.statistic + 1.312).abs() < 5e-4);
        assert!((out.p_value - 0.0947).abs() < 5e-4);
        assert!(!out.rejected);
    }

    #[test]
    fn pooling_branches() {
        let d = HybridData::case_study();
        let design = DesignParams::from_data(&d).unwrap();
        let ttp = rule_for(&WeightMethod::Ttp { alpha_h1: 0.05 }).unwrap();
        let out = ttp_eq_test(&d, ttp.as_ref(), &design, 0.05, Sidedness::OneSidedLower).unwrap();
        assert_eq!(out.pooled, Some(true));
        assert_eq!(out.statistic, pooled_statistic(&d, 1.0).unwrap());
        assert!(out.alpha_used < 0.05);
        assert_eq!(out.rejected, out.statistic < out.critical_value);

        let mut far = d;
        far.historical_control.mean += 10.0;
        let out = ttp_eq_test(&far, ttp.as_ref(), &design, 0.05, Sidedness::TwoSided).unwrap();
        assert_eq!(out.pooled, Some(false));
        assert_eq!(out.weight, 0.0);
        assert_eq!(out.statistic, pooled_statistic(&far, 0.0).unwrap());
        let via_dispatch = run_test(&far, ttp.as_ref(), &cfg(100, 0, Sidedness::TwoSided), None).unwrap();
        assert_eq!(via_dispatch, out);
    }

    #[test]
    fn equal_controls_always_pool() {
        // delta = 1.5 is infeasible here: its pooling region is empty
        let mut d = HybridData::case_study();
        d.historical_control.mean = d.current_control.mean;
        let design = DesignParams::from_data(&d).unwrap();
        for m in [WeightMethod::Ttp { alpha_h1: 0.10 }, WeightMethod::Eq { delta: 3.0, alpha_h2: 0.05 }] {
            let rule = rule_for(&m).unwrap();
            let out = ttp_eq_test(&d, rule.as_ref(), &design, 0.05, Sidedness::TwoSided).unwrap();
            assert_eq!(out.pooled, Some(true), "{m:?}");
        }
    }
}
