//! Request and response bodies shared by the CLI and the HTTP service.
//!
//! Both front ends build one of these requests and call the matching
//! function here, so a CLI run and an HTTP call with the same inputs and
//! seed produce the same numbers.

use std::sync::Arc;

use hybridctl_core::borrowing::{HybridData, WeightMethod};
use hybridctl_core::decision::{AdjustedAlpha, DesignParams};
use hybridctl_core::inference::{run_test, BootstrapConfig, Sidedness, TestOutcome};
use hybridctl_core::simlab::{build_scenario_table, scenario, Scenario, SimConfig, SimResult};
use hybridctl_core::strategy::{
    linear_grid, rule_for, weight_curve, BorrowingRule, Calibration, CurveDesign, CurvePoint, Registry, RuleOptions,
    DEFAULT_EQ_DELTA, STUDY_METHODS,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

pub const SCHEMA_VERSION: &str = "1.0";
pub const DEFAULT_SEED: u64 = 42;

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

/// A registry name (with `params`) or a full method configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodSpec {
    Name(String),
    Config(WeightMethod),
}

impl MethodSpec {
    pub fn resolve(&self, params: &RuleOptions) -> ApiResult<Arc<dyn BorrowingRule>> {
        Ok(match self {
            Self::Name(name) => Registry::builtin().create(name, params)?,
            Self::Config(m) => rule_for(m)?,
        })
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_two_sided() -> Sidedness {
    Sidedness::TwoSided
}
fn default_b() -> u64 {
    10_000
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSpec {
    #[serde(default = "default_b")]
    pub b_reps: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mu_hat: f64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self { b_reps: default_b(), seed: DEFAULT_SEED, mu_hat: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRequest {
    pub data: HybridData,
    pub method: MethodSpec,
    #[serde(default)]
    pub params: RuleOptions,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_two_sided")]
    pub sidedness: Sidedness,
    /// Required for dynamic-weight methods.
    #[serde(default)]
    pub bootstrap: Option<BootstrapSpec>,
    /// Required for pooling methods.
    #[serde(default)]
    pub design: Option<DesignParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeResponse {
    pub schema_version: String,
    pub method_config: WeightMethod,
    pub outcome: TestOutcome,
}

pub fn analyze(req: &AnalyzeRequest) -> ApiResult<AnalyzeResponse> {
    let rule = req.method.resolve(&req.params)?;
    let boot = match (rule.calibration(), &req.bootstrap) {
        (Calibration::Bootstrap, None) => {
            return Err(ApiError::invalid(format!("`{}` is bootstrap-calibrated; the request needs `bootstrap`", rule.name())))
        }
        (_, Some(b)) => b.clone(),
        (_, None) => BootstrapSpec::default(),
    };
    if rule.calibration() == Calibration::AdjustedAlpha && req.design.is_none() {
        return Err(ApiError::invalid(format!("`{}` needs a `design` to compute its adjusted alpha", rule.name())));
    }
    let mut config = BootstrapConfig::new(boot.b_reps, boot.seed, req.sidedness, req.alpha)?;
    config.mu_hat = boot.mu_hat;
    config.validate()?;
    req.data.validate()?;
    let outcome = run_test(&req.data, rule.as_ref(), &config, req.design.as_ref())?;
    Ok(AnalyzeResponse { schema_version: schema_version(), method_config: rule.method(), outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustAlphaRequest {
    pub design: DesignParams,
    pub method: MethodSpec,
    #[serde(default)]
    pub params: RuleOptions,
    /// Two-sided overall level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustAlphaResponse {
    pub schema_version: String,
    pub method: String,
    pub method_config: WeightMethod,
    pub design: DesignParams,
    pub adjusted: AdjustedAlpha,
}

pub fn adjust_alpha(req: &AdjustAlphaRequest) -> ApiResult<AdjustAlphaResponse> {
    let rule = req.method.resolve(&req.params)?;
    let adjusted = rule
        .adjusted_alpha(&req.design, req.alpha)?
        .ok_or_else(|| ApiError::invalid(format!("`{}` does not pool on a preliminary test; use ttp or eq", rule.name())))?;
    Ok(AdjustAlphaResponse {
        schema_version: schema_version(),
        method: rule.name().to_string(),
        method_config: rule.method(),
        design: req.design,
        adjusted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Points(Vec<f64>),
    Range { from: f64, to: f64, step: f64 },
}

impl Default for Grid {
    fn default() -> Self {
        Self::Range { from: -2.5, to: 2.5, step: 0.05 }
    }
}

impl Grid {
    pub fn points(&self) -> ApiResult<Vec<f64>> {
        match self {
            Self::Points(p) if p.is_empty() => Err(ApiError::invalid("t1_grid is empty")),
            Self::Points(p) => Ok(p.clone()),
            Self::Range { from, to, step } => Ok(linear_grid(*from, *to, *step)?),
        }
    }
}

fn default_arm_n() -> u64 {
    50
}
fn default_sd() -> f64 {
    5f64.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCurveRequest {
    pub method: MethodSpec,
    #[serde(default)]
    pub params: RuleOptions,
    #[serde(default)]
    pub t1_grid: Grid,
    #[serde(default = "default_arm_n")]
    pub n_c: u64,
    #[serde(default = "default_arm_n")]
    pub n_h: u64,
    #[serde(default = "default_sd")]
    pub sd_c: f64,
    #[serde(default = "default_sd")]
    pub sd_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCurveResponse {
    pub schema_version: String,
    pub method: String,
    pub method_config: WeightMethod,
    pub design: CurveDesign,
    pub points: Vec<CurvePoint>,
}

pub fn weight_curve_points(req: &WeightCurveRequest) -> ApiResult<WeightCurveResponse> {
    let rule = req.method.resolve(&req.params)?;
    let design = CurveDesign { n_c: req.n_c, n_h: req.n_h, sd_c: req.sd_c, sd_h: req.sd_h };
    let points = weight_curve(rule.as_ref(), &design, &req.t1_grid.points()?)?;
    Ok(WeightCurveResponse {
        schema_version: schema_version(),
        method: rule.name().to_string(),
        method_config: rule.method(),
        design,
        points,
    })
}

/// A built-in scenario by id, or a custom scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Id(u32),
    Custom(Scenario),
}

impl ScenarioSpec {
    pub fn resolve(&self) -> ApiResult<Scenario> {
        match self {
            Self::Id(id) => Ok(scenario(*id)?),
            Self::Custom(s) => {
                s.validate()?;
                Ok(*s)
            }
        }
    }
}

fn default_sims() -> u64 {
    10_000
}
fn default_sim_b() -> u64 {
    1_000
}
fn default_sim_alpha() -> f64 {
    0.025
}
fn default_upper() -> Sidedness {
    Sidedness::OneSidedUpper
}
fn default_methods() -> Vec<String> {
    STUDY_METHODS.iter().map(|s| s.to_string()).collect()
}
fn default_delta() -> f64 {
    DEFAULT_EQ_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default = "default_sims")]
    pub n_sims: u64,
    #[serde(default = "default_sim_b")]
    pub b_reps: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_sim_alpha")]
    pub alpha: f64,
    #[serde(default = "default_upper")]
    pub sidedness: Sidedness,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

/// A validated simulation plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub scenarios: Vec<Scenario>,
    pub config: SimConfig,
}

impl SimulateRequest {
    pub fn plan(&self, workers: usize) -> ApiResult<SimulationPlan> {
        if self.scenarios.is_empty() {
            return Err(ApiError::invalid("at least one scenario is required"));
        }
        let scenarios = self.scenarios.iter().map(ScenarioSpec::resolve).collect::<ApiResult<Vec<_>>>()?;
        let config = SimConfig {
            n_sims: self.n_sims,
            b_reps: self.b_reps,
            seed: self.seed,
            alpha: self.alpha,
            sidedness: self.sidedness,
            methods: self.methods.clone(),
            delta: self.delta,
            worker_count_hint: workers.max(1),
        };
        config.validate()?;
        let registry = Registry::builtin();
        for m in &config.methods {
            if !registry.contains(m) {
                return Err(ApiError::invalid(format!("unknown method `{m}`")));
            }
        }
        Ok(SimulationPlan { scenarios, config })
    }
}

impl SimulationPlan {
    /// Runs every scenario in order; `progress` gets the overall completed fraction.
    pub fn run(&self, progress: &(dyn Fn(f64) + Sync)) -> ApiResult<Vec<SimResult>> {
        let k = self.scenarios.len() as f64;
        let mut out = Vec::with_capacity(self.scenarios.len());
        for (i, s) in self.scenarios.iter().enumerate() {
            let cb = |d: u64, n: u64| progress((i as f64 + d as f64 / n as f64) / k);
            out.push(hybridctl_core::simlab::run_scenario(s, &self.config, Some(&cb))?);
        }
        progress(1.0);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    fn rank(self) -> u8 {
        match self {
            Self::Queued => 0,
            Self::Running => 1,
            Self::Done | Self::Failed => 2,
        }
    }

    /// Allowed moves: queued to running, running to done or failed, queued to failed.
    pub fn can_move_to(self, next: Self) -> bool {
        next.rank() > self.rank()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRecord {
    pub id: String,
    pub status: JobStatus,
    /// Completed fraction in [0, 1].
    pub progress: f64,
    /// Milliseconds since the Unix epoch.
    pub submitted_at: u64,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub results: Option<Vec<SimResult>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobAccepted {
    pub schema_version: String,
    pub job_id: String,
    pub status: JobStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobResponse {
    pub schema_version: String,
    pub job: JobRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenariosResponse {
    pub schema_version: String,
    pub scenarios: Vec<Scenario>,
}

pub fn scenarios() -> ScenariosResponse {
    ScenariosResponse { schema_version: schema_version(), scenarios: build_scenario_table() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthResponse {
    pub schema_version: String,
    pub status: String,
    pub version: String,
}

pub fn health() -> HealthResponse {
    HealthResponse {
        schema_version: schema_version(),
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: crate::error::ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorResponse {
    pub schema_version: String,
    pub error: ErrorBody,
}

impl From<&ApiError> for ErrorResponse {
    fn from(e: &ApiError) -> Self {
        Self { schema_version: schema_version(), error: ErrorBody { code: e.kind, message: e.message.clone() } }
    }
}

/// The embedded case-study reanalysis: one row per dynamic method plus the no-borrow baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyResponse {
    pub schema_version: String,
    pub data: HybridData,
    pub seed: u64,
    pub b_reps: u64,
    pub rows: Vec<TestOutcome>,
}

pub const CASE_STUDY_METHODS: [&str; 3] = ["db-t", "db-l1", "db-l2"];

pub fn case_study(seed: u64, b_reps: u64) -> ApiResult<CaseStudyResponse> {
    let data = HybridData::case_study();
    let mut rows = Vec::with_capacity(4);
    for name in CASE_STUDY_METHODS {
        let req = AnalyzeRequest {
            data,
            method: MethodSpec::Name(name.into()),
            params: RuleOptions::default(),
            alpha: 0.05,
            sidedness: Sidedness::OneSidedLower,
            bootstrap: Some(BootstrapSpec { b_reps, seed, mu_hat: 0.0 }),
            design: None,
        };
        rows.push(analyze(&req)?.outcome);
    }
    let baseline = AnalyzeRequest {
        data,
        method: MethodSpec::Config(WeightMethod::Fixed { a: 0.0 }),
        params: RuleOptions::default(),
        alpha: 0.05,
        sidedness: Sidedness::OneSidedLower,
        bootstrap: None,
        design: None,
    };
    rows.push(analyze(&baseline)?.outcome);
    Ok(CaseStudyResponse { schema_version: schema_version(), data, seed, b_reps, rows })
}
