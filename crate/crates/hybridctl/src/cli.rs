use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridctl_core::borrowing::{HybridData, SummaryStat};
use hybridctl_core::decision::DesignParams;
use hybridctl_core::inference::Sidedness;
use hybridctl_core::simlab::{export_results, scenario, ExportFormat, SimResult};
use hybridctl_core::strategy::{Registry, RuleOptions, STUDY_METHODS};
use serde::Serialize;

use crate::api::{self, BootstrapSpec, Grid, MethodSpec, ScenarioSpec, SimulateRequest, DEFAULT_SEED};
use crate::error::{ApiError, ApiResult};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Tail {
    Lower,
    Upper,
}

impl From<Tail> for Sidedness {
    fn from(t: Tail) -> Self {
        match t {
            Tail::Lower => Sidedness::OneSidedLower,
            Tail::Upper => Sidedness::OneSidedUpper,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hybridctl", version, about = "Dynamic borrowing of historical controls: analysis, calibration and simulation")]
pub struct Cli {
    /// Seed for every randomized step
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,

    /// Suppress progress and informational messages
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test the treatment effect on one dataset
    Analyze(AnalyzeArgs),
    /// Reanalyse the built-in case study with DB-T, DB-L1 and DB-L2
    CaseStudy(CaseStudyArgs),
    /// Adjusted significance level for a test-then-pool rule
    AdjustAlpha(AdjustAlphaArgs),
    /// Monte Carlo type 1 error and power
    Simulate(SimulateArgs),
    /// Borrowing level as a function of T1
    WeightCurve(WeightCurveArgs),
    /// Run the HTTP/JSON service
    Serve(ServeArgs),
    /// List the registered borrowing methods
    Methods,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// Method name, e.g. db-t, db-l1, db-l2, ttp1, eq1, fixed
    #[arg(long)]
    pub method: String,
    /// Borrowing level for `fixed`
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Preliminary-test level for `ttp` / `eq`
    #[arg(long, visible_aliases = ["alpha-h1", "alpha-h2"])]
    pub alpha_h: Option<f64>,
    /// Equivalence margin
    #[arg(long)]
    pub delta: Option<f64>,
}

impl MethodArgs {
    fn spec(&self) -> (MethodSpec, RuleOptions) {
        let params = RuleOptions { a: self.a, beta0: self.beta0, beta1: self.beta1, alpha_h: self.alpha_h, delta: self.delta };
        (MethodSpec::Name(self.method.clone()), params)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ArmArgs {
    /// `arm,value` CSV with arms treatment, control, historical
    #[arg(long, conflicts_with_all = ["nt", "mt", "st", "nc", "mc", "sc", "nh", "mh", "sh"])]
    pub data: Option<PathBuf>,
    #[arg(long, required_unless_present = "data")]
    pub nt: Option<u64>,
    #[arg(long, required_unless_present = "data", allow_hyphen_values = true)]
    pub mt: Option<f64>,
    #[arg(long, required_unless_present = "data")]
    pub st: Option<f64>,
    #[arg(long, required_unless_present = "data")]
    pub nc: Option<u64>,
    #[arg(long, required_unless_present = "data", allow_hyphen_values = true)]
    pub mc: Option<f64>,
    #[arg(long, required_unless_present = "data")]
    pub sc: Option<f64>,
    #[arg(long, required_unless_present = "data")]
    pub nh: Option<u64>,
    #[arg(long, required_unless_present = "data", allow_hyphen_values = true)]
    pub mh: Option<f64>,
    #[arg(long, required_unless_present = "data")]
    pub sh: Option<f64>,
}

impl ArmArgs {
    fn data(&self) -> ApiResult<HybridData> {
        if let Some(path) = &self.data {
            let f = File::open(path).map_err(|e| ApiError::invalid(format!("{}: {e}", path.display())))?;
            return crate::ingest::read_arms(f);
        }
        let missing = || ApiError::invalid("arm summaries are incomplete");
        let arm = |n: Option<u64>, m: Option<f64>, s: Option<f64>| -> ApiResult<SummaryStat> {
            Ok(SummaryStat::new(n.ok_or_else(missing)?, m.ok_or_else(missing)?, s.ok_or_else(missing)?)?)
        };
        Ok(HybridData {
            treatment: arm(self.nt, self.mt, self.st)?,
            current_control: arm(self.nc, self.mc, self.sc)?,
            historical_control: arm(self.nh, self.mh, self.sh)?,
        })
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub arms: ArmArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// One-sided test in the given direction (two-sided when omitted)
    #[arg(long, value_enum)]
    pub one_sided: Option<Tail>,
    /// Bootstrap replicates
    #[arg(long, default_value_t = 10_000)]
    pub b: u64,
    /// Common null mean of the bootstrap arms
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu_hat: f64,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    #[arg(long, default_value_t = 10_000)]
    pub b: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// Take sizes and variance from a built-in scenario
    #[arg(long, conflicts_with_all = ["nt", "nc", "nh"])]
    pub scenario: Option<u32>,
    #[arg(long, required_unless_present = "scenario")]
    pub nt: Option<u64>,
    #[arg(long, required_unless_present = "scenario")]
    pub nc: Option<u64>,
    #[arg(long, required_unless_present = "scenario")]
    pub nh: Option<u64>,
    /// Common variance of the three arms
    #[arg(long, conflicts_with_all = ["sigma_t", "sigma_c", "sigma_h"])]
    pub variance: Option<f64>,
    #[arg(long, requires_all = ["sigma_c", "sigma_h"])]
    pub sigma_t: Option<f64>,
    #[arg(long)]
    pub sigma_c: Option<f64>,
    #[arg(long)]
    pub sigma_h: Option<f64>,
    /// True `mu_c - mu_h`
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu_diff: f64,
}

impl DesignArgs {
    fn design(&self) -> ApiResult<DesignParams> {
        if let Some(id) = self.scenario {
            let s = scenario(id)?;
            let v = self.variance.unwrap_or(s.variance);
            return Ok(DesignParams::with_common_variance(s.n_t, s.n_c, s.n_h, v, self.mu_diff)?);
        }
        let missing = || ApiError::invalid("design needs --nt, --nc and --nh");
        let (nt, nc, nh) = (self.nt.ok_or_else(missing)?, self.nc.ok_or_else(missing)?, self.nh.ok_or_else(missing)?);
        match (self.sigma_t, self.sigma_c, self.sigma_h) {
            (Some(t), Some(c), Some(h)) => Ok(DesignParams::new(nt, nc, nh, t, c, h, self.mu_diff)?),
            _ => {
                let v = self.variance.ok_or_else(|| ApiError::invalid("design needs --variance or all three --sigma-*"))?;
                Ok(DesignParams::with_common_variance(nt, nc, nh, v, self.mu_diff)?)
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct AdjustAlphaArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    /// Two-sided overall level
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario ids, e.g. `1-4,6`
    #[arg(long, required = true)]
    pub scenarios: String,
    /// Comma-separated method names
    #[arg(long, value_delimiter = ',', default_values_t = STUDY_METHODS.map(String::from))]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub n_sims: u64,
    #[arg(long, default_value_t = 1_000)]
    pub b: u64,
    /// Per-tail level for one-sided tests
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = Tail::Upper, conflicts_with = "two_sided")]
    pub one_sided: Tail,
    #[arg(long)]
    pub two_sided: bool,
    #[arg(long, default_value_t = hybridctl_core::strategy::DEFAULT_EQ_DELTA)]
    pub delta: f64,
    /// Worker threads (hint)
    #[arg(long, env = "HYBRIDCTL_WORKERS")]
    pub workers: Option<usize>,
    /// Results file; `.json` writes JSON, anything else CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightCurveArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, default_value_t = 50)]
    pub nc: u64,
    #[arg(long, default_value_t = 50)]
    pub nh: u64,
    #[arg(long, default_value_t = 5f64.sqrt())]
    pub sd_c: f64,
    #[arg(long, default_value_t = 5f64.sqrt())]
    pub sd_h: f64,
    #[arg(long, default_value_t = -2.5, allow_hyphen_values = true)]
    pub from: f64,
    #[arg(long, default_value_t = 2.5, allow_hyphen_values = true)]
    pub to: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "HYBRIDCTL_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "HYBRIDCTL_BIND", default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, env = "HYBRIDCTL_WORKERS")]
    pub workers: Option<usize>,
}

/// Parses `1-4,6,10-12` into sorted unique ids.
pub fn parse_id_list(s: &str) -> ApiResult<Vec<u32>> {
    let bad = || ApiError::invalid(format!("cannot read scenario list `{s}`"));
    let mut ids = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                ids.extend(a..=b);
            }
            None => ids.push(part.parse().map_err(|_| bad())?),
        }
    }
    if ids.is_empty() {
        return Err(bad());
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct Ctx<'a> {
    format: OutputFormat,
    quiet: bool,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit<T: Serialize>(&mut self, value: &T, table: impl FnOnce() -> String, csv: impl FnOnce() -> ApiResult<String>) -> ApiResult<()> {
        let text = match self.format {
            OutputFormat::Json => serde_json::to_string_pretty(value).map_err(|e| ApiError::invalid(e.to_string()))? + "\n",
            OutputFormat::Table => table(),
            OutputFormat::Csv => csv()?,
        };
        self.out.write_all(text.as_bytes()).map_err(io_err)
    }
}

fn io_err(e: io::Error) -> ApiError {
    ApiError::new(crate::error::ErrorKind::Internal, e.to_string())
}

fn run_command(cli: Cli, ctx: &mut Ctx<'_>) -> ApiResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Analyze(a) => {
            let data = a.arms.data()?;
            let (method, params) = a.method.spec();
            let rule = method.resolve(&params)?;
            let design = match rule.calibration() {
                hybridctl_core::strategy::Calibration::AdjustedAlpha => Some(DesignParams::from_data(&data)?),
                _ => None,
            };
            let req = api::AnalyzeRequest {
                data,
                method,
                params,
                alpha: a.alpha,
                sidedness: a.one_sided.map(Sidedness::from).unwrap_or(Sidedness::TwoSided),
                bootstrap: Some(BootstrapSpec { b_reps: a.b, seed, mu_hat: a.mu_hat }),
                design,
            };
            let resp = api::analyze(&req)?;
            ctx.emit(&resp, || report::outcome_table(&[resp.outcome.clone()]), || report::outcome_csv(&[resp.outcome.clone()]))
        }
        Command::CaseStudy(c) => {
            let resp = api::case_study(seed, c.b)?;
            ctx.emit(&resp, || report::case_study_table(&resp), || report::outcome_csv(&resp.rows))
        }
        Command::AdjustAlpha(a) => {
            let (method, params) = a.method.spec();
            let req = api::AdjustAlphaRequest { design: a.design.design()?, method, params, alpha: a.alpha };
            let resp = api::adjust_alpha(&req)?;
            ctx.emit(&resp, || report::adjusted_table(&resp), || report::adjusted_csv(&resp))
        }
        Command::Simulate(s) => simulate(s, seed, ctx),
        Command::WeightCurve(w) => {
            let (method, params) = w.method.spec();
            let req = api::WeightCurveRequest {
                method,
                params,
                t1_grid: Grid::Range { from: w.from, to: w.to, step: w.step },
                n_c: w.nc,
                n_h: w.nh,
                sd_c: w.sd_c,
                sd_h: w.sd_h,
            };
            let resp = api::weight_curve_points(&req)?;
            ctx.emit(&resp, || report::curve_table(&resp), || report::curve_csv(&resp))
        }
        Command::Methods => {
            let registry = Registry::builtin();
            let rows: Vec<(String, String)> = registry.describe().map(|(n, d)| (n.to_string(), d.to_string())).collect();
            ctx.emit(&rows, || report::methods_table(&rows), || report::methods_csv(&rows))
        }
        Command::Serve(s) => {
            let addr = SocketAddr::new(s.bind, s.port);
            let workers = s.workers.unwrap_or_else(default_workers);
            let quiet = ctx.quiet;
            let rt = tokio::runtime::Runtime::new().map_err(io_err)?;
            rt.block_on(crate::server::serve(addr, workers, |bound| {
                if !quiet {
                    eprintln!("listening on http://{bound}");
                }
            }))
            .map_err(io_err)
        }
    }
}

fn simulate(s: SimulateArgs, seed: u64, ctx: &mut Ctx<'_>) -> ApiResult<()> {
    let ids = parse_id_list(&s.scenarios)?;
    let req = SimulateRequest {
        scenarios: ids.into_iter().map(ScenarioSpec::Id).collect(),
        n_sims: s.n_sims,
        b_reps: s.b,
        seed,
        alpha: s.alpha,
        sidedness: if s.two_sided { Sidedness::TwoSided } else { s.one_sided.into() },
        methods: s.methods,
        delta: s.delta,
    };
    let plan = req.plan(s.workers.unwrap_or_else(default_workers))?;
    let quiet = ctx.quiet;
    let last = std::sync::atomic::AtomicU64::new(0);
    let results: Vec<SimResult> = plan.run(&|f| {
        // print at most every whole percent
        let pct = (f * 100.0).floor() as u64;
        if !quiet && pct > last.fetch_max(pct, std::sync::atomic::Ordering::Relaxed) {
            eprint!("\rsimulating... {pct:3}%");
            if pct == 100 {
                eprintln!();
            }
        }
    })?;
    if let Some(path) = &s.out {
        write_results(path, &results)?;
        if !quiet {
            writeln!(ctx.err, "wrote {}", path.display()).map_err(io_err)?;
        }
    }
    ctx.emit(&results, || report::sim_table(&results), || {
        let bytes = export_results(&results, ExportFormat::Csv)?;
        String::from_utf8(bytes).map_err(|e| ApiError::invalid(e.to_string()))
    })
}

fn write_results(path: &Path, results: &[SimResult]) -> ApiResult<()> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => ExportFormat::Json,
        _ => ExportFormat::Csv,
    };
    let bytes = export_results(results, format)?;
    std::fs::write(path, bytes).map_err(|e| ApiError::invalid(format!("{}: {e}", path.display())))
}

/// Runs the CLI with explicit arguments and streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut ctx = Ctx { format: cli.format, quiet: cli.quiet, out, err };
    match run_command(cli, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {}", e.message);
            e.exit_code()
        }
    }
}
