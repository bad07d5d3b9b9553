use hybridctl_core::borrowing::{HybridData, LogisticParams, SummaryStat, WeightMethod};
use hybridctl_core::decision::DesignParams;
use hybridctl_core::inference::{
    bootstrap_test, draw_null_replicate, ttp_eq_test, BootstrapConfig, NullSampler, Sidedness,
};
use hybridctl_core::rng::StreamKey;
use hybridctl_core::strategy::rule_for;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn truth(n_t: u64, n_c: u64, n_h: u64, variance: f64) -> HybridData {
    let arm = |n| SummaryStat { n, mean: 0.0, sd: variance.sqrt() };
    HybridData { treatment: arm(n_t), current_control: arm(n_c), historical_control: arm(n_h) }
}

fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn replicate_moments_are_unbiased() {
    let data = HybridData::case_study();
    let mu = 3.5;
    let draws = 100_000;
    let mut rng = StreamKey::new(8).stream(0);
    let reps: Vec<HybridData> = (0..draws).map(|_| draw_null_replicate(&data, mu, &mut rng).unwrap()).collect();
    let arms = |r: &HybridData| [r.treatment, r.current_control, r.historical_control];
    for (k, arm) in arms(&data).iter().enumerate() {
        let means: Vec<f64> = reps.iter().map(|r| arms(r)[k].mean).collect();
        let vars: Vec<f64> = reps.iter().map(|r| arms(r)[k].sd.powi(2)).collect();
        let m = means.iter().sum::<f64>() / draws as f64;
        assert!((m - mu).abs() < 4.0 * arm.sd / (arm.n as f64 * draws as f64).sqrt(), "arm {k} mean {m}");
        let v = vars.iter().sum::<f64>() / draws as f64;
        let s2 = arm.sd * arm.sd;
        // Var(s^2) = 2 sigma^4 / (n - 1)
        let se = (2.0 * s2 * s2 / (arm.n - 1) as f64 / draws as f64).sqrt();
        assert!((v - s2).abs() < 4.0 * se, "arm {k} var {v} vs {s2}");
        assert!(arms(&reps[0])[k].n == arm.n);
    }
}

#[test]
fn sufficient_statistics_match_individual_sampling() {
    let n = 25u64;
    let sd = 2.0;
    let arm = SummaryStat { n, mean: 0.0, sd };
    let data = HybridData { treatment: arm, current_control: arm, historical_control: arm };
    let draws = 100_000;
    let mut rng = StreamKey::new(2026).stream(0);
    let (mut fast_m, mut fast_s): (Vec<f64>, Vec<f64>) = (0..draws)
        .map(|_| {
            let r = draw_null_replicate(&data, 1.0, &mut rng).unwrap().current_control;
            (r.mean, r.sd)
        })
        .unzip();
    let mut rng = StreamKey::new(2026).stream(1);
    let (mut slow_m, mut slow_s): (Vec<f64>, Vec<f64>) = (0..draws)
        .map(|_| {
            let xs: Vec<f64> = (0..n).map(|_| 1.0 + sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let s = SummaryStat::from_values(&xs).unwrap();
            (s.mean, s.sd)
        })
        .unzip();
    let dm = ks_distance(&mut fast_m, &mut slow_m);
    let ds = ks_distance(&mut fast_s, &mut slow_s);
    assert!(dm < 0.006, "KS on means {dm}");
    assert!(ds < 0.006, "KS on sds {ds}");
}

#[test]
fn invariant_to_null_center() {
    let data = HybridData::case_study();
    let b = 2_000;
    for m in [WeightMethod::DbT, WeightMethod::DbL { params: LogisticParams::DB_L2 }] {
        let rule = rule_for(&m).unwrap();
        let mut cfg = BootstrapConfig::new(b, 77, Sidedness::OneSidedLower, 0.05).unwrap();
        let p0 = bootstrap_test(&data, rule.as_ref(), &cfg).unwrap();
        cfg.mu_hat = 100.0;
        let p100 = bootstrap_test(&data, rule.as_ref(), &cfg).unwrap();
        assert!((p0.p_value - p100.p_value).abs() <= 2.0 / (b as f64).sqrt());
        assert!((p0.critical_value - p100.critical_value).abs() < 1e-9);
    }
}

/// Bootstrap p-values of `n_data` null datasets drawn from `truth`.
fn null_p_values(truth: &HybridData, method: WeightMethod, n_data: u64, b: u64, seed: u64, side: Sidedness) -> Vec<f64> {
    let rule = rule_for(&method).unwrap();
    let sampler = NullSampler::new(truth, 0.0).unwrap();
    let key = StreamKey::new(seed);
    (0..n_data)
        .into_par_iter()
        .map(|i| {
            let data = sampler.draw(&mut key.child(i).stream(0));
            let cfg = BootstrapConfig::new(b, key.child(i).child(1).seed(), side, 0.05).unwrap();
            bootstrap_test(&data, rule.as_ref(), &cfg).unwrap().p_value
        })
        .collect()
}

#[test]
fn p_values_are_uniform_under_the_null() {
    let b = 500;
    let ps = null_p_values(&truth(50, 50, 50, 5.0), WeightMethod::DbT, 10_000, b, 31, Sidedness::TwoSided);
    for p in &ps {
        let k = p * b as f64;
        assert!((k - k.round()).abs() < 1e-9 && (0.0..=1.0).contains(p));
    }
    let bins = 10;
    let mut counts = vec![0usize; bins];
    for p in &ps {
        counts[((p * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = ps.len() as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // chi-square(9) upper 0.1% point
    assert!(chi2 < 27.877, "chi2 = {chi2}, counts = {counts:?}");
}

#[test]
fn fixed_no_borrow_bootstrap_holds_level() {
    let n_data = 10_000;
    let ps = null_p_values(&truth(50, 25, 25, 5.0), WeightMethod::Fixed { a: 0.0 }, n_data, 500, 5, Sidedness::OneSidedUpper);
    let rate = ps.iter().filter(|&&p| p <= 0.05).count() as f64 / n_data as f64;
    let se = (0.05f64 * 0.95 / n_data as f64).sqrt();
    assert!((rate - 0.05).abs() < 4.0 * se, "rate = {rate}");
}

#[test]
fn ttp_holds_two_sided_level_on_null_data() {
    let t = truth(50, 50, 50, 5.0);
    let design = DesignParams::with_common_variance(50, 50, 50, 5.0, 0.0).unwrap();
    let rule = rule_for(&WeightMethod::Ttp { alpha_h1: 0.05 }).unwrap();
    let sampler = NullSampler::new(&t, 0.0).unwrap();
    let key = StreamKey::new(404);
    let n = 10_000u64;
    let rejections: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let data = sampler.draw(&mut key.stream(i));
            ttp_eq_test(&data, rule.as_ref(), &design, 0.05, Sidedness::TwoSided).unwrap().rejected as usize
        })
        .sum();
    let rate = rejections as f64 / n as f64;
    assert!((rate - 0.05).abs() < 0.005, "rate = {rate}");
}
