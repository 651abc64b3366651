//! Values checked against closed forms computed by hand.

use randstop::objectives::{eval_csc, Objective, UtilityFn, WeightingFn};
use randstop::optimize::{
    compare_rule_classes, optimize_csc_mixture, optimize_rdu_quantile, CompareOptions, ThresholdGrid,
};
use randstop::simulate::{ks_critical, ks_statistic, run_threshold, SimConfig};
use randstop::{build_scale, hall_embed, wasserstein1, CaseTag, DiffusionSpec, Distribution, ThresholdPair};

#[test]
fn rdu_square_root_power_weighting() {
    let v = UtilityFn::Power { exponent: 0.5, coefficient: 2.0 };
    let w = WeightingFn::Power { gamma: 0.75 };
    for y in [0.5, 1.0, 3.0] {
        let sol = optimize_rdu_quantile(&v, &w, y, 2048).unwrap();
        let lambda = 0.75 * (2.0 / y).sqrt();
        let value = 1.5 * (2.0 * y).sqrt();
        assert!((sol.lambda - lambda).abs() <= 1e-10 * lambda);
        assert!((sol.report.value - value).abs() <= 1e-8 * value);
        assert!((sol.discretized_value - value).abs() <= 1e-2 * value);
        let pushed = sol.target.mean();
        assert!((pushed - y).abs() <= 1e-9 * y);
    }
}

fn frozen() -> (UtilityFn, UtilityFn, Distribution, Distribution) {
    (
        UtilityFn::PiecewiseLinear { knots: vec![(0.0, 0.0), (2.0, 2.0), (3.0, 2.5), (4.0, 3.5)] },
        UtilityFn::PiecewiseLinear { knots: vec![(0.0, 0.0), (1.0, 0.5), (4.0, 3.5), (5.0, 4.0)] },
        Distribution::chi(2.0, 4.0, 2.5).unwrap(),
        Distribution::chi(0.0, 4.0, 2.5).unwrap(),
    )
}

#[test]
fn csc_mixture_closed_form() {
    let (ua, ub, l1, l2) = frozen();
    let s = optimize_csc_mixture(&ua, &ub, &l1, &l2).unwrap();
    assert!((s.theta - 5.0 / 9.0).abs() <= 1e-12);
    assert!((s.value - 31.0 / 12.0).abs() <= 1e-12);
    let mix = Distribution::mixture(&[(5.0 / 9.0, &l1), (4.0 / 9.0, &l2)]).unwrap();
    assert!((eval_csc(&[ua, ub], &mix).unwrap() - 31.0 / 12.0).abs() <= 1e-12);
}

#[test]
fn csc_pure_optimum_is_stopping_at_once() {
    let (ua, ub, _, _) = frozen();
    let scale = build_scale(&DiffusionSpec::brownian((0.0, 5.0), 2.5)).unwrap();
    let grid = ThresholdGrid::new(2.5, scale.case(), 41, 41).unwrap().with_points(&[0.0, 2.0, 4.0]);
    let rep =
        compare_rule_classes(&Objective::Csc { utilities: vec![ua, ub] }, &scale, &grid, &CompareOptions::default())
            .unwrap();
    assert!((rep.v_star_tt - 2.5).abs() <= 1e-12);
    assert!((rep.v_star_tr - 31.0 / 12.0).abs() <= 1e-12, "{}", rep.v_star_tr);
}

#[test]
fn linear_utility_has_no_gap() {
    let scale = build_scale(&DiffusionSpec::brownian((0.0, 10.0), 3.0)).unwrap();
    let grid = ThresholdGrid::new(3.0, scale.case(), 21, 21).unwrap();
    let rep =
        compare_rule_classes(&Objective::Eu { utility: UtilityFn::Linear }, &scale, &grid, &CompareOptions::default())
            .unwrap();
    assert!((rep.v_star_tt - 3.0).abs() <= 1e-12);
    assert!(rep.gap.abs() <= 1e-12);
}

#[test]
fn uniform_target_on_bounded_interval() {
    let nu = Distribution::uniform(0.0, 2.0).unwrap();
    let rule = hall_embed(&nu, 1.0, &CaseTag::Bounded { lower: 0.0, upper: 2.0 }).unwrap();
    assert!((rule.total_mass() - 1.0).abs() <= 1e-12);
    assert!(wasserstein1(&rule.pushforward().unwrap(), &nu).unwrap() <= 1e-12);
    // band density L(da) U(db) (b - a) / c with c = 1/4
    let band = rule.band.as_ref().unwrap();
    assert!((band.c - 0.25).abs() <= 1e-12);
}

fn exit_top(k: f64, a: f64, b: f64, x: f64) -> f64 {
    if k == 0.0 {
        (x - a) / (b - a)
    } else {
        (-(-k * (x - a)).exp_m1()) / (-(-k * (b - a)).exp_m1())
    }
}

#[test]
fn drifted_exit_probability() {
    let line = (f64::NEG_INFINITY, f64::INFINITY);
    let n = 40_000;
    for (drift, vol) in [(0.5, 1.0), (-0.3, 0.7)] {
        let spec = DiffusionSpec::constant(drift, vol, line, 0.0);
        let k = 2.0 * drift / (vol * vol);
        let p = exit_top(k, -1.0, 1.5, 0.0);
        for exact in [false, true] {
            let cfg = SimConfig { paths: n, seed: 11, exact_sampling: exact, ..Default::default() };
            let s = build_scale(&spec).unwrap();
            let pair = ThresholdPair::new(s.eval(-1.0), s.eval(1.5), s.start());
            let law = run_threshold(&spec, &pair, &cfg).unwrap();
            let hat = law.values().iter().filter(|&&v| v > 0.25).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((hat - p).abs() <= 4.0 * se, "drift {drift} exact {exact}: {hat} vs {p}");
        }
    }
}

#[test]
fn gbm_exit_probability() {
    let (mu, sigma) = (0.1, 0.4);
    let spec = DiffusionSpec::gbm(mu, sigma, 1.0);
    // Itô: log-price has drift mu - sigma^2 / 2, so the scale density is z^(-2 mu / sigma^2)
    let e = 1.0 - 2.0 * mu / (sigma * sigma);
    let s = |z: f64| z.powf(e);
    let p = (s(1.0) - s(0.5)) / (s(2.0) - s(0.5));
    let n = 40_000;
    let cfg = SimConfig { paths: n, seed: 3, ..Default::default() };
    let sc = build_scale(&spec).unwrap();
    let pair = ThresholdPair::new(sc.eval(0.5), sc.eval(2.0), sc.start());
    let law = run_threshold(&spec, &pair, &cfg).unwrap();
    let hat = law.values().iter().filter(|&&v| v > 1.25).count() as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hat - p).abs() <= 4.0 * se, "{hat} vs {p}");
}

#[test]
fn ks_critical_values() {
    assert!((ks_critical(0.05) - 1.3581).abs() <= 1e-4);
    assert!((ks_critical(0.01) - 1.6276).abs() <= 1e-4);
    let u = Distribution::uniform(0.0, 1.0).unwrap();
    let samples: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
    assert!((ks_statistic(&samples, &u) - 0.005).abs() <= 1e-12);
}

fn dense_theta_optimum(ua: &UtilityFn, ub: &UtilityFn, l1: &Distribution, l2: &Distribution) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=10_000 {
        let t = i as f64 / 10_000.0;
        let mix = Distribution::mixture(&[(t, l1), (1.0 - t, l2)]).unwrap();
        let v = eval_csc(&[ua.clone(), ub.clone()], &mix).unwrap();
        if v > best.0 {
            best = (v, t);
        }
    }
    best
}

#[test]
fn csc_convex_transform_stays_at_boundary() {
    let ua = UtilityFn::power(2.0);
    let ub = UtilityFn::Sqrt;
    let l1 = Distribution::from_atoms(&[(0.0, 0.5), (2.0, 0.5)]).unwrap();
    let l2 = Distribution::dirac(1.0).unwrap();
    let s = optimize_csc_mixture(&ua, &ub, &l1, &l2).unwrap();
    let (v, t) = dense_theta_optimum(&ua, &ub, &l1, &l2);
    assert_eq!(s.theta, 0.0);
    assert_eq!(t, 0.0);
    assert!((s.value - 1.0).abs() <= 1e-12 && (v - 1.0).abs() <= 1e-12);
}

#[test]
fn csc_frozen_instance_against_dense_grid() {
    let (ua, ub, l1, l2) = frozen();
    let s = optimize_csc_mixture(&ua, &ub, &l1, &l2).unwrap();
    let (v, t) = dense_theta_optimum(&ua, &ub, &l1, &l2);
    assert!((s.theta - t).abs() <= 1e-4);
    assert!(s.value >= v - 1e-12);
    assert!(s.value > s.endpoint_values.0.max(s.endpoint_values.1) + 1e-3);
}
