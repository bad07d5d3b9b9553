//! Plain-text tables and CSV renderings of command results.

use std::fmt::Write as _;

use hybridctl_core::inference::TestOutcome;
use hybridctl_core::simlab::SimResult;

use crate::api::{AdjustAlphaResponse, CaseStudyResponse, WeightCurveResponse};
use crate::error::{ApiError, ApiResult};

fn csv_of<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> ApiResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| ApiError::invalid(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| ApiError::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ApiError::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ApiError::invalid(e.to_string()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn side_label(o: &TestOutcome) -> &'static str {
    use hybridctl_core::inference::Sidedness::*;
    match o.sidedness {
        OneSidedLower => "lower",
        OneSidedUpper => "upper",
        TwoSided => "two-sided",
    }
}

pub fn outcome_table(rows: &[TestOutcome]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>8} {:>10} {:>10} {:>8} {:>9} {:>7} {:>8}",
        "method", "weight", "statistic", "critical", "p", "alpha", "pooled", "reject"
    );
    for o in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>8.4} {:>10.4} {:>10.4} {:>8.4} {:>9.5} {:>7} {:>8}",
            o.method,
            o.weight,
            o.statistic,
            o.critical_value,
            o.p_value,
            o.alpha_used,
            o.pooled.map(|p| if p { "yes" } else { "no" }).unwrap_or("-"),
            if o.rejected { "yes" } else { "no" }
        );
    }
    if let Some(o) = rows.first() {
        let _ = write!(s, "test: {}, alpha {}", side_label(o), o.alpha);
        if let (Some(b), Some(seed)) = (o.b_reps, o.seed) {
            let _ = write!(s, ", B = {b}, seed = {seed}");
        }
        s.push('\n');
    }
    s
}

pub fn outcome_csv(rows: &[TestOutcome]) -> ApiResult<String> {
    csv_of(
        ["method", "weight", "statistic", "critical_value", "p_value", "alpha", "alpha_used", "pooled", "rejected", "b_reps", "seed"],
        rows.iter().map(|o| {
            [
                o.method.clone(),
                o.weight.to_string(),
                o.statistic.to_string(),
                o.critical_value.to_string(),
                o.p_value.to_string(),
                o.alpha.to_string(),
                o.alpha_used.to_string(),
                opt(o.pooled),
                o.rejected.to_string(),
                opt(o.b_reps),
                opt(o.seed),
            ]
        }),
    )
}

pub fn case_study_table(r: &CaseStudyResponse) -> String {
    let mut s = String::new();
    let d = &r.data;
    let _ = writeln!(s, "arm          n     mean      sd");
    for (name, a) in [("treatment", d.treatment), ("control", d.current_control), ("historical", d.historical_control)] {
        let _ = writeln!(s, "{name:<10} {:>4} {:>8.2} {:>7.2}", a.n, a.mean, a.sd);
    }
    s.push('\n');
    s.push_str(&outcome_table(&r.rows));
    s
}

pub fn adjusted_table(r: &AdjustAlphaResponse) -> String {
    let a = &r.adjusted;
    format!(
        "method     {}\nalpha      {}\nalpha*     {:.10}\nresidual   {:.3e}\nhalfwidth  {:.6}\n",
        r.method, a.alpha, a.alpha_star, a.residual, a.pool_halfwidth
    )
}

pub fn adjusted_csv(r: &AdjustAlphaResponse) -> ApiResult<String> {
    let a = &r.adjusted;
    csv_of(
        ["method", "alpha", "alpha_star", "residual", "pool_halfwidth"],
        [[r.method.clone(), a.alpha.to_string(), a.alpha_star.to_string(), a.residual.to_string(), a.pool_halfwidth.to_string()]],
    )
}

pub fn curve_table(r: &WeightCurveResponse) -> String {
    let mut s = format!("{:>8} {:>10}\n", "t1", r.method);
    for p in &r.points {
        let _ = writeln!(s, "{:>8.3} {:>10.6}", p.t1, p.weight);
    }
    s
}

pub fn curve_csv(r: &WeightCurveResponse) -> ApiResult<String> {
    csv_of(["t1", "weight"], r.points.iter().map(|p| [p.t1.to_string(), p.weight.to_string()]))
}

pub fn sim_table(results: &[SimResult]) -> String {
    let mut s = format!("{:>8} {:<8} {:>10} {:>8} {:>8} {:>10}\n", "scenario", "method", "rate", "mc_se", "weight", "alpha*");
    for r in results {
        for m in &r.methods {
            let _ = writeln!(
                s,
                "{:>8} {:<8} {:>9.3}% {:>7.3}% {:>8.4} {:>10}",
                r.scenario_id,
                m.method,
                100.0 * m.rejection_rate,
                100.0 * m.mc_se,
                m.mean_weight,
                m.alpha_star.map(|a| format!("{a:.6}")).unwrap_or_else(|| "-".into())
            );
        }
    }
    if let Some(r) = results.first() {
        let _ = writeln!(s, "n_sims = {}, B = {}, seed = {}, alpha = {}", r.n_sims, r.b_reps, r.seed, r.alpha);
    }
    s
}

pub fn methods_table(rows: &[(String, String)]) -> String {
    rows.iter().map(|(n, d)| format!("{n:<8} {d}\n")).collect()
}

pub fn methods_csv(rows: &[(String, String)]) -> ApiResult<String> {
    csv_of(["method", "description"], rows.iter().map(|(n, d)| [n.clone(), d.clone()]))
}
