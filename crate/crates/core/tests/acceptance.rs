//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p hybridctl-core --test acceptance`; pass a
//! substring after `--` to select criteria by name.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hybridctl_core::borrowing::{
    pooled_statistic, t1_statistic, weight_logistic, HybridData, LogisticParams, SummaryStat, WeightMethod,
};
use hybridctl_core::decision::{adjusted_alpha_eq, adjusted_alpha_ttp, eq_threshold, DesignParams, EqConfig};
use hybridctl_core::inference::{run_test, BootstrapConfig, Sidedness};
use hybridctl_core::numerics::{bvn_cdf, bvn_rect_prob, bvn_upper, std_normal_cdf, t_density_ratio, t_quantile, BvnSpec};
use hybridctl_core::simlab::{run_scenario, run_trials, scenario, SimConfig, SimResult};
use hybridctl_core::strategy::{rule_for, Registry, RuleOptions, STUDY_METHODS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

const SEED: u64 = 42;

struct Check {
    label: String,
    pass: bool,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn within(&mut self, label: &str, got: f64, want: f64, tol: f64) {
        let pass = (got - want).abs() <= tol;
        self.0.push(Check { label: format!("{label} = {got:.6} (want {want} ± {tol})"), pass });
    }

    fn at_least(&mut self, label: &str, got: f64, min: f64) {
        self.0.push(Check { label: format!("{label} = {got:.6} (want >= {min})"), pass: got >= min });
    }

    fn range(&mut self, label: &str, got: f64, lo: f64, hi: f64) {
        self.0.push(Check { label: format!("{label} = {got:.6} (want [{lo}, {hi}])"), pass: (lo..=hi).contains(&got) });
    }

    fn faster(&mut self, label: &str, took: Duration, limit: Duration) {
        let pass = took < limit;
        self.0.push(Check { label: format!("{label} {:.2}s (limit {:.0}s)", took.as_secs_f64(), limit.as_secs_f64()), pass });
    }

    fn holds(&mut self, label: &str, pass: bool) {
        self.0.push(Check { label: label.to_string(), pass });
    }
}

fn rule(name: &str) -> std::sync::Arc<dyn hybridctl_core::strategy::BorrowingRule> {
    Registry::builtin().create(name, &RuleOptions::default()).unwrap()
}

fn case_study_determinism(c: &mut Checks) {
    let start = Instant::now();
    let data = HybridData::case_study();
    let mut rows = Vec::new();
    for name in ["db-t", "db-l1", "db-l2"] {
        let w = rule(name).weight(&data).unwrap();
        rows.push((name, w, pooled_statistic(&data, w).unwrap()));
    }
    let took = start.elapsed();
    c.within("db-t level", rows[0].1, 0.81, 0.005);
    c.at_least("db-l1 level", rows[1].1, 0.985);
    c.at_least("db-l2 level", rows[2].1, 0.985);
    for ((name, _, t), want) in rows.iter().zip([-1.81, -1.85, -1.82]) {
        c.within(&format!("{name} statistic"), *t, want, 0.01);
    }
    c.faster("runtime", took, Duration::from_secs(1));
}

fn case_study_bootstrap(c: &mut Checks) {
    let data = HybridData::case_study();
    let cfg = BootstrapConfig::new(10_000, SEED, Sidedness::OneSidedLower, 0.05).unwrap();
    let start = Instant::now();
    let outcomes: Vec<_> =
        ["db-t", "db-l1", "db-l2"].iter().map(|n| run_test(&data, rule(n).as_ref(), &cfg, None).unwrap()).collect();
    let took = start.elapsed();
    for (o, (p, crit)) in outcomes.iter().zip([(0.0408, -1.73), (0.0378, -1.72), (0.0364, -1.70)]) {
        c.within(&format!("{} p", o.method), o.p_value, p, 0.010);
        c.within(&format!("{} critical", o.method), o.critical_value, crit, 0.03);
    }
    c.faster("runtime", took, Duration::from_secs(10));
}

fn no_borrow_baseline(c: &mut Checks) {
    let start = Instant::now();
    let data = HybridData::case_study();
    let fixed = rule_for(&WeightMethod::Fixed { a: 0.0 }).unwrap();
    let cfg = BootstrapConfig::new(100, SEED, Sidedness::OneSidedLower, 0.05).unwrap();
    let o = run_test(&data, fixed.as_ref(), &cfg, None).unwrap();
    let took = start.elapsed();
    c.within("p", o.p_value, 0.0947, 5e-4);
    c.faster("runtime", took, Duration::from_secs(1));
}

fn weight_anchors(c: &mut Checks) {
    let t95 = t_quantile(0.95, 98).unwrap();
    c.within("A_t(t_0.95,98)", t_density_ratio(t95, 98).unwrap(), 0.25, 0.005);
    c.within("A_l1(0)", weight_logistic(0.0, &LogisticParams::DB_L1), 0.9994, 1e-4);
    c.within("A_l1(1.96)", weight_logistic(1.96, &LogisticParams::DB_L1), 0.20, 0.01);

    let sd = 5f64.sqrt();
    let se = (sd * sd / 50.0 * 2.0).sqrt();
    let data = HybridData::new(
        SummaryStat::new(50, 0.0, sd).unwrap(),
        SummaryStat::new(50, 1.96 * se, sd).unwrap(),
        SummaryStat::new(50, 0.0, sd).unwrap(),
    )
    .unwrap();
    let t1 = t1_statistic(&data.current_control, &data.historical_control).unwrap();
    assert!((t1 - 1.96).abs() < 1e-12);
    c.within("db-t(1.96, 50/50)", rule("db-t").weight(&data).unwrap(), 0.14, 0.01);
}

fn eq_boundaries(c: &mut Checks) {
    let cfg = EqConfig::new(1.5, 0.05).unwrap();
    for (n, want) in [(50, 1.71), (100, 3.10)] {
        let arm = SummaryStat::new(n, 0.0, 5f64.sqrt()).unwrap();
        c.within(&format!("endpoint n={n}"), eq_threshold(&arm, &arm, &cfg).unwrap(), want, 0.01);
    }
}

/// Known-variance TTP/EQ procedure simulated from scratch under the null.
fn oracle_rejection(d: &DesignParams, alpha_star: f64, pool_t1: f64, reps: u64, seed: u64) -> f64 {
    let z = Normal::standard();
    let crit = z.inverse_cdf(1.0 - alpha_star / 2.0);
    let (nt, nc, nh) = (d.n_t as f64, d.n_c as f64, d.n_h as f64);
    let (vt, vc, vh) = (d.sigma_t.powi(2) / nt, d.sigma_c.powi(2) / nc, d.sigma_h.powi(2) / nh);
    let se1 = (vc + vh).sqrt();
    let se_pool = (vt + (nc * d.sigma_c.powi(2) + nh * d.sigma_h.powi(2)) / (nc + nh).powi(2)).sqrt();
    let se_sep = (vt + vc).sqrt();
    let chunks = 100u64;
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let mut hits = 0u64;
            for _ in 0..reps / chunks {
                let xt = vt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let xc = vc.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let xh = vh.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let t = if ((xc - xh) / se1).abs() < pool_t1 {
                    (xt - (nc * xc + nh * xh) / (nc + nh)) / se_pool
                } else {
                    (xt - xc) / se_sep
                };
                hits += u64::from(t.abs() > crit);
            }
            hits
        })
        .sum();
    hits as f64 / reps as f64
}

fn alpha_oracle(c: &mut Checks) {
    let start = Instant::now();
    let design = scenario(2).unwrap().design().unwrap();
    let z = Normal::standard();
    let reps = 1_000_000;
    let se1 = design.control_diff_var().sqrt();
    for (i, (name, alpha_h)) in [("ttp1", 0.05), ("ttp2", 0.10)].into_iter().enumerate() {
        let a = adjusted_alpha_ttp(&design, 0.05, alpha_h).unwrap();
        let rate = oracle_rejection(&design, a.alpha_star, z.inverse_cdf(1.0 - alpha_h / 2.0), reps, 100 + i as u64);
        c.within(&format!("{name} overall (alpha* {:.5})", a.alpha_star), rate, 0.05, 0.0007);
    }
    for (i, (name, alpha_h)) in [("eq1", 0.05), ("eq2", 0.10)].into_iter().enumerate() {
        let cfg = EqConfig::new(1.5, alpha_h).unwrap();
        let a = adjusted_alpha_eq(&design, 0.05, &cfg).unwrap();
        let bound = 1.5 / se1 - z.inverse_cdf(1.0 - alpha_h);
        let rate = oracle_rejection(&design, a.alpha_star, bound.max(0.0), reps, 200 + i as u64);
        c.within(&format!("{name} overall (alpha* {:.5})", a.alpha_star), rate, 0.05, 0.0007);
    }
    c.faster("runtime", start.elapsed(), Duration::from_secs(120));
}

fn trivial_alpha_identities(c: &mut Checks) {
    for id in [1, 2, 6, 24] {
        let design = scenario(id).unwrap().design().unwrap();
        let ttp = adjusted_alpha_ttp(&design, 0.05, 1.0 - 1e-9).unwrap();
        c.within(&format!("scenario {id} ttp alpha_h1 -> 1"), ttp.alpha_star, 0.05, 1e-6);
        let eq = adjusted_alpha_eq(&design, 0.05, &EqConfig::new(1e-4, 0.05).unwrap()).unwrap();
        c.within(&format!("scenario {id} empty eq"), eq.alpha_star, 0.05, 1e-6);
    }
}

fn sim_config(n_sims: u64, seed: u64) -> SimConfig {
    SimConfig {
        n_sims,
        b_reps: 1_000,
        seed,
        alpha: 0.025,
        sidedness: Sidedness::OneSidedUpper,
        methods: STUDY_METHODS.iter().map(|s| s.to_string()).collect(),
        ..SimConfig::default()
    }
}

fn rate(r: &SimResult, name: &str) -> f64 {
    r.method(name).unwrap().rejection_rate
}

fn type1_desk_scale(c: &mut Checks) {
    let start = Instant::now();
    let r = run_scenario(&scenario(2).unwrap(), &sim_config(10_000, SEED), None).unwrap();
    let took = start.elapsed();
    for name in ["db-t", "db-l1", "db-l2"] {
        c.range(name, rate(&r, name), 0.020, 0.031);
    }
    for name in ["ttp1", "ttp2", "eq1", "eq2"] {
        c.range(name, rate(&r, name), 0.020, 0.034);
    }
    c.faster("runtime", took, Duration::from_secs(15 * 60));
}

fn power_ranking(c: &mut Checks) {
    let r = run_scenario(&scenario(6).unwrap(), &sim_config(20_000, SEED), None).unwrap();
    let n = r.n_sims as f64;
    let l2 = rate(&r, "db-l2");
    for name in ["ttp1", "ttp2", "eq1", "eq2"] {
        let other = rate(&r, name);
        let pooled_se = (l2 * (1.0 - l2) / n + other * (1.0 - other) / n).sqrt();
        c.holds(
            &format!("db-l2 {l2:.4} vs {name} {other:.4} (margin {:.4})", 2.0 * pooled_se),
            l2 >= other - 2.0 * pooled_se,
        );
    }
}

fn bvn_engine(c: &mut Checks) {
    let mut worst: f64 = 0.0;
    for x in [-6.0, -2.5, -1.0, -0.3, 0.0, 0.4, 1.7, 3.0, 7.0] {
        for y in [-4.0, -1.2, 0.0, 0.9, 2.2, 5.0] {
            worst = worst.max((bvn_cdf(x, y, 0.0) - std_normal_cdf(x) * std_normal_cdf(y)).abs());
        }
    }
    c.holds(&format!("rho=0 factorization max error {worst:.2e} (limit 1e-12)"), worst <= 1e-12);
    let orthant = 0.25 + 0.5f64.asin() / (2.0 * std::f64::consts::PI);
    c.within("orthant rho=0.5", bvn_upper(0.0, 0.0, 0.5), orthant, 1e-4);

    let mut gen = ChaCha8Rng::seed_from_u64(7);
    let cases: Vec<_> = (0..20)
        .map(|_| {
            let (m1, m2) = (gen.random_range(-1.0..1.0), gen.random_range(-1.0..1.0));
            let (v1, v2): (f64, f64) = (gen.random_range(0.3..3.0), gen.random_range(0.3..3.0));
            let rho: f64 = gen.random_range(-0.95..0.95);
            let mut edge = |sd: f64, m: f64| {
                let a: f64 = m + sd * gen.random_range(-2.5..1.5);
                let b = a + sd * gen.random_range(0.2..3.0);
                match gen.random_range(0..4) {
                    0 => (f64::NEG_INFINITY, b),
                    1 => (a, f64::INFINITY),
                    _ => (a, b),
                }
            };
            let r1 = edge(v1.sqrt(), m1);
            let r2 = edge(v2.sqrt(), m2);
            (BvnSpec::new(m1, m2, v1, v2, rho).unwrap(), r1, r2)
        })
        .collect();
    let draws = 10_000_000u64;
    let fails: Vec<String> = cases
        .par_iter()
        .enumerate()
        .filter_map(|(i, (spec, (lo1, hi1), (lo2, hi2)))| {
            let exact = bvn_rect_prob(spec, *lo1, *hi1, *lo2, *hi2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let (s1, s2, r) = (spec.var1.sqrt(), spec.var2.sqrt(), spec.corr);
            let q = (1.0 - r * r).sqrt();
            let mut hits = 0u64;
            for _ in 0..draws {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let x = spec.mean1 + s1 * z1;
                let y = spec.mean2 + s2 * (r * z1 + q * z2);
                hits += u64::from(x > *lo1 && x <= *hi1 && y > *lo2 && y <= *hi2);
            }
            let p = hits as f64 / draws as f64;
            let se = (exact * (1.0 - exact) / draws as f64).sqrt().max(1.0 / draws as f64);
            ((p - exact).abs() > 4.0 * se).then(|| format!("#{i}: exact {exact:.6} mc {p:.6}"))
        })
        .collect();
    c.holds(&format!("20 rectangles within 4 SE of 1e7 draws {fails:?}"), fails.is_empty());
}

fn determinism(c: &mut Checks) {
    let data = HybridData::case_study();
    let cfg = BootstrapConfig::new(2_000, SEED, Sidedness::TwoSided, 0.05).unwrap();
    let a = run_test(&data, rule("db-l2").as_ref(), &cfg, None).unwrap();
    let b = run_test(&data, rule("db-l2").as_ref(), &cfg, None).unwrap();
    c.holds("bootstrap repeat", a == b && a.critical_value.to_bits() == b.critical_value.to_bits());

    let sc = scenario(10).unwrap();
    let run = |workers: usize| {
        let mut cfg = sim_config(600, 11);
        cfg.b_reps = 200;
        cfg.worker_count_hint = workers;
        run_scenario(&sc, &cfg, None).unwrap()
    };
    let (one, four, again) = (run(1), run(4), run(1));
    c.holds("simulation 1 vs 4 workers", one.methods == four.methods);
    c.holds("simulation repeat", one.methods == again.methods);

    let mut cfg = sim_config(600, 11);
    cfg.b_reps = 200;
    let whole = run_trials(&sc, &cfg, 0..600).unwrap();
    let part = run_trials(&sc, &cfg, 250..400).unwrap();
    c.holds("trial sub-range", whole[250..400] == part[..]);
}

type Criterion = (&'static str, fn(&mut Checks));

const CRITERIA: &[Criterion] = &[
    ("case-study-determinism", case_study_determinism),
    ("case-study-bootstrap", case_study_bootstrap),
    ("no-borrow-baseline", no_borrow_baseline),
    ("weight-anchors", weight_anchors),
    ("eq-pooling-boundaries", eq_boundaries),
    ("alpha-adjustment-oracle", alpha_oracle),
    ("trivial-alpha-identities", trivial_alpha_identities),
    ("type1-desk-scale", type1_desk_scale),
    ("power-ranking", power_ranking),
    ("bivariate-normal-engine", bvn_engine),
    ("determinism", determinism),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut checks = Checks::default();
        let panicked = catch_unwind(AssertUnwindSafe(|| f(&mut checks))).err();
        let pass = panicked.is_none() && checks.0.iter().all(|c| c.pass);
        failed += usize::from(!pass);
        println!("{} {name} ({:.2}s)", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        for ch in &checks.0 {
            println!("     {} {}", if ch.pass { "ok  " } else { "FAIL" }, ch.label);
        }
        if let Some(p) = panicked {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            println!("     FAIL panicked: {}", msg.unwrap_or_default());
        }
    }
    println!("\nacceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
