//! Monte Carlo operating characteristics of the borrowing methods.
//!
//! Each simulated trial draws the three arms' sufficient statistics from a
//! scenario's truth, runs every configured method on that same trial and
//! records rejections. Dynamic-weight methods share one set of bootstrap
//! replicates per trial.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::borrowing::{check_open_unit, pooled_statistic_unchecked, HybridData, SummaryStat};
use crate::decision::DesignParams;
use crate::error::{domain, Error, Result};
use crate::inference::{null_distributions, NullSampler, Sidedness, MIN_BOOTSTRAP_REPS};
use crate::rng::StreamKey;
use crate::strategy::{BorrowingRule, Calibration, Registry, RuleOptions, DEFAULT_EQ_DELTA, STUDY_METHODS};

pub const MIN_SIMS: u64 = 100;

/// Rule used to turn bootstrap output into a rejection.
pub const BOOTSTRAP_DECISION_RULE: &str = "reject when bootstrap p-value <= alpha";
/// How one-sided pooling tests use the two-sided adjusted level.
pub const POOLING_LEVEL_RULE: &str =
    "alpha* solved two-sided at the two-sided equivalent of alpha from the true design with mu_c = mu_h; one-sided tests use z(1 - alpha*/2)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u32,
    pub n_t: u64,
    pub n_c: u64,
    pub n_h: u64,
    pub mu_t: f64,
    pub mu_c: f64,
    pub mu_h: f64,
    /// Common variance of all three arms.
    pub variance: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 || self.n_c < 2 || self.n_h < 2 {
            return Err(domain("scenario sample sizes must all be >= 2"));
        }
        if ![self.mu_t, self.mu_c, self.mu_h].iter().all(|m| m.is_finite()) {
            return Err(domain("scenario means must be finite"));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(domain(format!("scenario variance must be finite and > 0, got {}", self.variance)));
        }
        Ok(())
    }

    /// Design used to calibrate pooling rules: true sizes and sds, no control drift.
    pub fn design(&self) -> Result<DesignParams> {
        DesignParams::with_common_variance(self.n_t, self.n_c, self.n_h, self.variance, 0.0)
    }

    fn truth(&self) -> HybridData {
        let arm = |n, mean| SummaryStat { n, mean, sd: self.variance.sqrt() };
        HybridData {
            treatment: arm(self.n_t, self.mu_t),
            current_control: arm(self.n_c, self.mu_c),
            historical_control: arm(self.n_h, self.mu_h),
        }
    }
}

/// The 24 parameter settings of the operating-characteristics study.
pub fn build_scenario_table() -> Vec<Scenario> {
    const SIZES: [(u64, u64, u64); 4] = [(50, 25, 25), (50, 50, 50), (100, 50, 50), (100, 100, 100)];
    const MEANS: [(f64, f64, f64); 6] =
        [(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (2.0, 0.0, 1.0), (2.0, 0.0, -1.0), (2.0, 1.0, 0.0), (2.0, -1.0, 0.0)];
    let mut out = Vec::with_capacity(24);
    for (g, &(mu_t, mu_c, mu_h)) in MEANS.iter().enumerate() {
        for (k, &(n_t, n_c, n_h)) in SIZES.iter().enumerate() {
            let id = (4 * g + k + 1) as u32;
            out.push(Scenario { id, n_t, n_c, n_h, mu_t, mu_c, mu_h, variance: 5.0 });
        }
    }
    out
}

pub fn scenario(id: u32) -> Result<Scenario> {
    build_scenario_table()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Usage(format!("no scenario {id}; ids run from 1 to 24")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_sims: u64,
    pub b_reps: u64,
    pub seed: u64,
    /// Per-tail level for one-sided tests, total level when two-sided.
    pub alpha: f64,
    pub sidedness: Sidedness,
    /// Registry names of the methods to compare.
    pub methods: Vec<String>,
    /// Equivalence margin handed to the `eq*` rules.
    pub delta: f64,
    pub worker_count_hint: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_sims: 100_000,
            b_reps: 10_000,
            seed: 0,
            alpha: 0.025,
            sidedness: Sidedness::OneSidedUpper,
            methods: STUDY_METHODS.iter().map(|s| s.to_string()).collect(),
            delta: DEFAULT_EQ_DELTA,
            worker_count_hint: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sims < MIN_SIMS {
            return Err(domain(format!("n_sims must be >= {MIN_SIMS}, got {}", self.n_sims)));
        }
        if self.b_reps < MIN_BOOTSTRAP_REPS {
            return Err(domain(format!("b_reps must be >= {MIN_BOOTSTRAP_REPS}, got {}", self.b_reps)));
        }
        check_open_unit("alpha", self.alpha)?;
        check_open_unit("two-sided equivalent alpha", self.sidedness.two_sided_level(self.alpha))?;
        if self.methods.is_empty() {
            return Err(Error::Usage("at least one method is required".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(domain(format!("delta must be finite and > 0, got {}", self.delta)));
        }
        if self.worker_count_hint == 0 {
            return Err(domain("worker_count_hint must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub rejections: u64,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_weight: f64,
    /// Two-sided adjusted level, for pooling rules only.
    pub alpha_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub bootstrap_decision: String,
    pub pooling_level: String,
    pub resampling: String,
}

impl Default for SimMetadata {
    fn default() -> Self {
        Self {
            bootstrap_decision: BOOTSTRAP_DECISION_RULE.into(),
            pooling_level: POOLING_LEVEL_RULE.into(),
            resampling: "sufficient statistics: mean ~ normal, variance ~ scaled chi-square".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario_id: u32,
    pub n_sims: u64,
    pub b_reps: u64,
    pub seed: u64,
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub methods: Vec<MethodResult>,
    pub elapsed_secs: f64,
    pub metadata: SimMetadata,
}

impl SimResult {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Called with (trials completed, total trials).
pub type Progress<'a> = &'a (dyn Fn(u64, u64) + Sync);

struct Prepared {
    rule: Arc<dyn BorrowingRule>,
    alpha_star: Option<f64>,
    /// Normal critical value; unused for bootstrap rules.
    critical: f64,
}

fn prepare(scenario: &Scenario, config: &SimConfig) -> Result<Vec<Prepared>> {
    let registry = Registry::builtin();
    let options = RuleOptions { delta: Some(config.delta), ..Default::default() };
    let design = scenario.design()?;
    let side = config.sidedness;
    config
        .methods
        .iter()
        .map(|name| {
            let rule = registry.create(name, &options)?;
            let (alpha_star, critical) = match rule.calibration() {
                Calibration::Bootstrap => (None, f64::NAN),
                Calibration::NormalTheory => (None, side.normal_critical(config.alpha)?),
                Calibration::AdjustedAlpha => {
                    let adj = rule
                        .adjusted_alpha(&design, side.two_sided_level(config.alpha))?
                        .ok_or_else(|| Error::NumericalFailure(format!("`{name}` returned no adjusted alpha")))?;
                    let per_test = match side {
                        Sidedness::TwoSided => adj.alpha_star,
                        _ => adj.alpha_star / 2.0,
                    };
                    (Some(adj.alpha_star), side.normal_critical(per_test)?)
                }
            };
            Ok(Prepared { rule, alpha_star, critical })
        })
        .collect()
}

fn bootstrap_p(observed: f64, stats: &[f64], side: Sidedness) -> f64 {
    let count = match side {
        Sidedness::OneSidedLower => stats.iter().filter(|&&t| t <= observed).count(),
        Sidedness::OneSidedUpper => stats.iter().filter(|&&t| t >= observed).count(),
        Sidedness::TwoSided => stats.iter().filter(|&&t| t.abs() >= observed.abs()).count(),
    };
    count as f64 / stats.len() as f64
}

/// Outcome of one method on one simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub rejected: bool,
    pub weight: f64,
}

fn run_trial(
    prepared: &[Prepared],
    boot_idx: &[usize],
    sampler: &NullSampler,
    means: [f64; 3],
    key: StreamKey,
    config: &SimConfig,
) -> Result<Vec<TrialRecord>> {
    let data = sampler.draw_at(means, &mut key.stream(0));
    let mut out = Vec::with_capacity(prepared.len());
    for p in prepared {
        let weight = p.rule.weight(&data)?;
        let t = pooled_statistic_unchecked(&data, weight);
        if t.is_nan() {
            return Err(Error::DegenerateVariance("simulated trial has zero variance"));
        }
        let rejected = match p.rule.calibration() {
            Calibration::Bootstrap => false,
            _ => config.sidedness.beyond(t, p.critical),
        };
        out.push(TrialRecord { rejected, weight });
    }
    if !boot_idx.is_empty() {
        let rules: Vec<&dyn BorrowingRule> = boot_idx.iter().map(|&j| prepared[j].rule.as_ref()).collect();
        let boot = NullSampler::new(&data, 0.0)?;
        let dists = null_distributions(&boot, &rules, key.child(1), config.b_reps, false)?;
        for (&j, stats) in boot_idx.iter().zip(&dists) {
            let t = pooled_statistic_unchecked(&data, out[j].weight);
            out[j].rejected = bootstrap_p(t, stats, config.sidedness) <= config.alpha;
        }
    }
    Ok(out)
}

struct Engine {
    prepared: Vec<Prepared>,
    boot_idx: Vec<usize>,
    sampler: NullSampler,
    means: [f64; 3],
    root: StreamKey,
}

impl Engine {
    fn new(scenario: &Scenario, config: &SimConfig) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        let prepared = prepare(scenario, config)?;
        let boot_idx = prepared
            .iter()
            .enumerate()
            .filter(|(_, p)| p.rule.calibration() == Calibration::Bootstrap)
            .map(|(j, _)| j)
            .collect();
        Ok(Self {
            prepared,
            boot_idx,
            sampler: NullSampler::new(&scenario.truth(), 0.0)?,
            means: [scenario.mu_t, scenario.mu_c, scenario.mu_h],
            root: StreamKey::new(config.seed).child(scenario.id as u64),
        })
    }

    fn trials(&self, config: &SimConfig, range: Range<u64>, progress: Option<Progress<'_>>) -> Result<Vec<Vec<TrialRecord>>> {
        let total = range.end.saturating_sub(range.start);
        let done = AtomicU64::new(0);
        let step = (total / 100).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.worker_count_hint)
            .build()
            .map_err(|e| Error::NumericalFailure(format!("could not start worker pool: {e}")))?;
        pool.install(|| {
            range
                .into_par_iter()
                .map(|i| {
                    let r = run_trial(&self.prepared, &self.boot_idx, &self.sampler, self.means, self.root.child(i), config);
                    let d = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if let Some(cb) = progress {
                        if d % step == 0 || d == total {
                            cb(d, total);
                        }
                    }
                    r
                })
                .collect()
        })
    }
}

/// Per-trial records for trials `range` of the run `config` describes.
///
/// Inner vectors follow `config.methods`. Trial `i` is the same whichever
/// range it is requested in.
pub fn run_trials(scenario: &Scenario, config: &SimConfig, range: Range<u64>) -> Result<Vec<Vec<TrialRecord>>> {
    Engine::new(scenario, config)?.trials(config, range, None)
}

/// Simulates `config.n_sims` trials of `scenario` and tallies each method.
///
/// Trial `i` draws from the substream keyed by `i`, so the result does not
/// depend on `worker_count_hint` apart from `elapsed_secs`.
pub fn run_scenario(scenario: &Scenario, config: &SimConfig, progress: Option<Progress<'_>>) -> Result<SimResult> {
    let start = Instant::now();
    let engine = Engine::new(scenario, config)?;
    let n = config.n_sims;
    let trials = engine.trials(config, 0..n, progress)?;

    let nf = n as f64;
    let methods = engine
        .prepared
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let rejections = trials.iter().filter(|t| t[j].rejected).count() as u64;
            let weight_sum: f64 = trials.iter().map(|t| t[j].weight).sum();
            let rate = rejections as f64 / nf;
            MethodResult {
                method: p.rule.name().to_string(),
                rejections,
                rejection_rate: rate,
                mc_se: (rate * (1.0 - rate) / nf).sqrt(),
                mean_weight: weight_sum / nf,
                alpha_star: p.alpha_star,
            }
        })
        .collect();
    Ok(SimResult {
        scenario_id: scenario.id,
        n_sims: n,
        b_reps: config.b_reps,
        seed: config.seed,
        alpha: config.alpha,
        sidedness: config.sidedness,
        methods,
        elapsed_secs: start.elapsed().as_secs_f64(),
        metadata: SimMetadata::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Usage(format!("unsupported export format `{other}` (use csv or json)"))),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

pub const CSV_HEADER: [&str; 6] = ["scenario", "method", "rejection_rate", "mc_se", "mean_weight", "alpha_star"];

/// One flattened row of the CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: u32,
    pub method: String,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_weight: f64,
    pub alpha_star: Option<f64>,
}

/// Rounds to 10 significant digits and prints in plain decimal.
pub fn format_sig10(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.9e}").parse().unwrap_or(x);
    rounded.to_string()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Usage(format!("csv: {e}"))
}

/// Serializes results; CSV values carry 10 significant digits, JSON is exact.
pub fn export_results(results: &[SimResult], format: ExportFormat) -> Result<Vec<u8>> {
    if results.is_empty() {
        return Err(Error::Usage("no results to export".into()));
    }
    match format {
        ExportFormat::Json => serde_json::to_vec_pretty(results).map_err(|e| Error::Usage(format!("json: {e}"))),
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in results {
                for m in &r.methods {
                    w.write_record([
                        r.scenario_id.to_string(),
                        m.method.clone(),
                        format_sig10(m.rejection_rate),
                        format_sig10(m.mc_se),
                        format_sig10(m.mean_weight),
                        m.alpha_star.map(format_sig10).unwrap_or_default(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))
        }
    }
}

pub fn parse_json_results(bytes: &[u8]) -> Result<Vec<SimResult>> {
    serde_json::from_slice(bytes).map_err(|e| Error::Usage(format!("json: {e}")))
}

pub fn parse_csv_rows(bytes: &[u8]) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Usage(format!("unexpected csv header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let t = build_scenario_table();
        assert_eq!(t.len(), 24);
        let s1 = t[0];
        assert_eq!((s1.id, s1.n_t, s1.n_c, s1.n_h), (1, 50, 25, 25));
        assert_eq!((s1.mu_t, s1.mu_c, s1.mu_h, s1.variance), (0.0, 0.0, 0.0, 5.0));
        let s12 = scenario(12).unwrap();
        assert_eq!((s12.n_t, s12.n_c, s12.n_h, s12.mu_t, s12.mu_c, s12.mu_h), (100, 100, 100, 2.0, 0.0, 1.0));
        let s24 = scenario(24).unwrap();
        assert_eq!((s24.n_t, s24.n_c, s24.n_h, s24.mu_t, s24.mu_c, s24.mu_h), (100, 100, 100, 2.0, -1.0, 0.0));
        assert!(t.iter().all(|s| s.variance == 5.0));
        assert!(matches!(scenario(25), Err(Error::Usage(_))));
    }

    #[test]
    fn sig10_formatting() {
        assert_eq!(format_sig10(0.025), "0.025");
        assert_eq!(format_sig10(1.0 / 3.0), "0.3333333333");
        assert_eq!(format_sig10(0.0), "0");
        assert_eq!(format_sig10(123456.789012345), "123456.789");
    }

    #[test]
    fn config_checks() {
        let ok = SimConfig { n_sims: 100, b_reps: 100, ..Default::default() };
        ok.validate().unwrap();
        assert!(SimConfig { n_sims: 99, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { b_reps: 10, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { alpha: 0.6, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { methods: vec![], ..ok.clone() }.validate().is_err());
        assert!(SimConfig { worker_count_hint: 0, ..ok.clone() }.validate().is_err());
        let bad = SimConfig { methods: vec!["nope".into()], ..ok };
        assert!(matches!(run_scenario(&scenario(1).unwrap(), &bad, None), Err(Error::Usage(_))));
    }

    #[test]
    fn format_names() {
        assert_eq!("CSV".parse::<ExportFormat>().unwrap(), ExportFormat::Csv);
        assert!(matches!("xml".parse::<ExportFormat>(), Err(Error::Usage(_))));
        assert!(matches!(export_results(&[], ExportFormat::Json), Err(Error::Usage(_))));
    }
}
