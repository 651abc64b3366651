//! Acceptance criteria, one PASS/FAIL line each.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use randstop::embedding::{hall_embed_with_diagnostics, ThresholdPair};
use randstop::io::to_json_string;
use randstop::objectives::{Objective, UtilityFn, WeightingFn};
use randstop::optimize::{
    compare_rule_classes, optimize_csc_mixture, optimize_rdu_quantile, CompareOptions, ThresholdGrid,
};
use randstop::scale::build_scale_numeric;
use randstop::simulate::{run_threshold, verify_embedding, SimConfig};
use randstop::{build_scale, hall_embed, CaseTag, DiffusionSpec, Distribution};

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        println!("{id} {} {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

fn random_target(rng: &mut ChaCha8Rng, case: &CaseTag) -> (Distribution, f64) {
    let k = rng.random_range(1..=50);
    let mut atoms: Vec<(f64, f64)> =
        (0..k).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.01..1.0))).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for a in atoms.iter_mut() {
        a.1 /= total;
    }
    let (lo, hi) = match case {
        CaseTag::Bounded { .. } => (0.0, 10.0),
        CaseTag::BoundedBelow { .. } => (0.0, f64::INFINITY),
        CaseTag::BoundedAbove { .. } => (f64::NEG_INFINITY, 10.0),
        CaseTag::WholeLine => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let mut d = Distribution::from_atoms(&atoms).unwrap();
    let mean = d.mean();
    let x = match case {
        CaseTag::Bounded { .. } => mean,
        CaseTag::BoundedBelow { .. } => mean + rng.random_range(0.0..3.0),
        CaseTag::BoundedAbove { .. } => mean - rng.random_range(0.0..3.0),
        CaseTag::WholeLine => rng.random_range(-2.0..12.0),
    };
    if !(lo < x && x < hi) {
        d = Distribution::from_atoms(&[(x, 1.0)]).unwrap();
    }
    (d, x)
}

fn ac1(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = [
        CaseTag::Bounded { lower: 0.0, upper: 10.0 },
        CaseTag::BoundedBelow { lower: 0.0 },
        CaseTag::BoundedAbove { upper: 10.0 },
        CaseTag::WholeLine,
    ];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    for i in 0..500 {
        let case = cases[i % 4];
        let (nu, x) = random_target(&mut rng, &case);
        let result = hall_embed(&nu, x, &case).and_then(|rule| rule.pushforward());
        match result {
            Ok(pf) => {
                let got: Vec<(f64, f64)> = pf.atoms().collect();
                let want: Vec<(f64, f64)> = nu.atoms().collect();
                if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.0 != w.0) {
                    errors += 1;
                    continue;
                }
                for (g, w) in got.iter().zip(&want) {
                    worst = worst.max((g.1 - w.1).abs());
                }
            }
            Err(_) => errors += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "AC1",
        errors == 0 && worst <= 1e-10 && secs < 10.0,
        format!("500 random atomic targets: max atom error {worst:.2e} (tol 1e-10), failures {errors}, {secs:.2}s (limit 10s)"),
    );
}

fn ac2(r: &mut Report) {
    let nu = Distribution::from_atoms(&[(0.0, 0.5), (3.0, 0.5)]).unwrap();
    let (rule, d) = hall_embed_with_diagnostics(&nu, 2.0, &CaseTag::BoundedBelow { lower: 0.0 }).unwrap();
    let pairs = rule.pairs().unwrap();
    let mass_of = |a: f64, b: f64| pairs.iter().find(|p| p.0.a == a && p.0.b == b).map_or(0.0, |p| p.1);
    let ok = (d.v_star - 0.25).abs() <= 1e-12
        && d.z_star == 0.0
        && (d.c - 0.5).abs() <= 1e-12
        && pairs.len() == 2
        && (mass_of(0.0, f64::INFINITY) - 0.25).abs() <= 1e-12
        && (mass_of(0.0, 3.0) - 0.75).abs() <= 1e-12;
    r.line(
        "AC2",
        ok,
        format!(
            "v*={} z*={} c={} rule={{(0,inf): {}, (0,3): {}}}",
            d.v_star,
            d.z_star,
            d.c,
            mass_of(0.0, f64::INFINITY),
            mass_of(0.0, 3.0)
        ),
    );
}

fn ac3(r: &mut Report) {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let setups = [
        (0.0, 3.0, 1.0, CaseTag::BoundedBelow { lower: 0.0 }),
        (-1.0, 2.0, 0.5, CaseTag::Bounded { lower: -1.0, upper: 2.0 }),
        (-4.0, 1.5, -1.0, CaseTag::BoundedAbove { upper: 3.0 }),
        (2.0, 7.0, 3.0, CaseTag::WholeLine),
    ];
    for (a, b, x, case) in setups {
        let nu = Distribution::chi(a, b, x).unwrap();
        let rule = hall_embed(&nu, x, &case).unwrap();
        let pairs = rule.pairs().unwrap();
        if pairs.len() != 1 || pairs[0].0 != ThresholdPair::new(a, b, x) {
            ok = false;
        } else {
            worst = worst.max((pairs[0].1 - 1.0).abs());
        }
    }
    r.line(
        "AC3",
        ok && worst <= 1e-12,
        format!("two-point targets give pure rules, |mass - 1| <= {worst:.1e} (tol 1e-12)"),
    );
}

fn ac4(r: &mut Report) {
    let v = UtilityFn::Power { exponent: 0.5, coefficient: 2.0 };
    let w = WeightingFn::Power { gamma: 0.75 };
    let sol = optimize_rdu_quantile(&v, &w, 1.0, 4096).unwrap();
    let expected = 0.75 / 0.5f64.sqrt();
    let rel = (sol.lambda - expected).abs() / expected;
    let ok = rel <= 1e-8 && sol.budget_residual <= 1e-8 && sol.lagrangian_residual <= 1e-6;
    r.line(
        "AC4",
        ok,
        format!(
            "lambda*={:.15} expected {:.15} rel err {rel:.1e} (tol 1e-8); budget residual {:.1e} (tol 1e-8); Lagrangian residual {:.1e} (tol 1e-6)",
            sol.lambda, expected, sol.budget_residual, sol.lagrangian_residual
        ),
    );
}

fn ac5(r: &mut Report) {
    let line = (f64::NEG_INFINITY, f64::INFINITY);
    let setups = [
        ("sqrt / BM on [0,inf)", UtilityFn::Sqrt, DiffusionSpec::brownian((0.0, f64::INFINITY), 1.0)),
        ("2 z^0.5 / GBM", UtilityFn::Power { exponent: 0.5, coefficient: 2.0 }, DiffusionSpec::gbm(0.02, 0.4, 1.0)),
        ("exp(0.5) / BM drift 0.1", UtilityFn::Exponential { rate: 0.5 }, DiffusionSpec::constant(0.1, 1.0, line, 0.0)),
        ("z^2 / BM on [0,4]", UtilityFn::power(2.0), DiffusionSpec::brownian((0.0, 4.0), 1.0)),
        (
            "exp(-0.5) / BM drift -0.1",
            UtilityFn::Exponential { rate: -0.5 },
            DiffusionSpec::constant(-0.1, 1.0, line, 0.0),
        ),
        ("z^3 / GBM", UtilityFn::power(3.0), DiffusionSpec::gbm(0.2, 0.4, 1.0)),
    ];
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (name, u, spec) in setups {
        let scale = build_scale(&spec).unwrap();
        let grid = ThresholdGrid::new(scale.start(), scale.case(), 200, 200).unwrap();
        match compare_rule_classes(&Objective::Eu { utility: u }, &scale, &grid, &CompareOptions::default()) {
            Ok(rep) => worst = worst.max(rep.gap.abs()),
            Err(e) => {
                println!("  {name}: {e}");
                ok = false;
            }
        }
    }
    r.line(
        "AC5",
        ok && worst <= 1e-6,
        format!("expected utility, 3 concave + 3 convex, 200x200 grid: max |gap| {worst:.2e} (tol 1e-6)"),
    );
}

fn csc_pair() -> (UtilityFn, UtilityFn) {
    (
        UtilityFn::PiecewiseLinear { knots: vec![(0.0, 0.0), (2.0, 2.0), (3.0, 2.5), (4.0, 3.5)] },
        UtilityFn::PiecewiseLinear { knots: vec![(0.0, 0.0), (1.0, 0.5), (4.0, 3.5), (5.0, 4.0)] },
    )
}

fn ac6(r: &mut Report) {
    let (ua, ub) = csc_pair();
    let spec = DiffusionSpec::brownian((0.0, 5.0), 2.5);
    let scale = build_scale(&spec).unwrap();
    let grid = ThresholdGrid::new(2.5, scale.case(), 200, 200).unwrap();
    let obj = Objective::Csc { utilities: vec![ua.clone(), ub.clone()] };
    let rep = compare_rule_classes(&obj, &scale, &grid, &CompareOptions::default()).unwrap();
    let law1 = Distribution::chi(2.0, 4.0, 2.5).unwrap();
    let law2 = Distribution::chi(0.0, 4.0, 2.5).unwrap();
    let mix = optimize_csc_mixture(&ua, &ub, &law1, &law2).unwrap();
    let diff = (mix.certainty_equivalents[0] - mix.certainty_equivalents[1]).abs();
    let ok = rep.gap >= 1e-3 && diff <= 1e-8 && mix.crossing;
    r.line(
        "AC6",
        ok,
        format!(
            "CSC gap on 200x200 grid {:.6} (need >= 1e-3; V_T={:.6}, V_R={:.6}); theta*={:.12} |C_A-C_B|={diff:.1e} (tol 1e-8)",
            rep.gap, rep.v_star_tt, rep.v_star_tr, mix.theta
        ),
    );
}

fn ac7_run(exact: bool) -> (usize, f64, f64) {
    let line = DiffusionSpec::brownian((f64::NEG_INFINITY, f64::INFINITY), 1.0);
    let n = 100_000;
    let se = (0.25 / n as f64).sqrt();
    let mut good = 0;
    let start = Instant::now();
    for seed in 0..10 {
        let cfg = SimConfig { paths: n, seed, exact_sampling: exact, ..Default::default() };
        let law = run_threshold(&line, &ThresholdPair::new(0.0, 2.0, 1.0), &cfg).unwrap();
        let p = law.values().iter().filter(|&&v| v == 2.0).count() as f64 / law.len() as f64;
        if (p - 0.5).abs() <= 3.0 * se && law.censored() == 0 {
            good += 1;
        }
    }
    let spec = DiffusionSpec::brownian((0.0, f64::INFINITY), 2.0);
    let nu = Distribution::from_atoms(&[(0.0, 0.5), (3.0, 0.5)]).unwrap();
    let rule = hall_embed(&nu, 2.0, &CaseTag::BoundedBelow { lower: 0.0 }).unwrap();
    let cfg = SimConfig { paths: n, seed: 7, exact_sampling: exact, ..Default::default() };
    let rep = verify_embedding(&spec, &nu, &rule, &cfg, &[]).unwrap();
    (good, rep.w1, start.elapsed().as_secs_f64())
}

fn ac7(r: &mut Report) {
    let (good, w1, secs) = ac7_run(false);
    let (good_x, w1_x, secs_x) = ac7_run(true);
    let ok = good >= 9 && w1 <= 0.03 && secs < 60.0 && good_x >= 9 && w1_x <= 0.03 && secs_x < 2.0;
    r.line(
        "AC7",
        ok,
        format!(
            "paths: {good}/10 seeds within 3 SE, W1 {w1:.4} (tol 0.03), {secs:.1}s (limit 60s); exact sampling: {good_x}/10, W1 {w1_x:.4}, {secs_x:.2}s (limit 2s)"
        ),
    );
}

fn ac8(r: &mut Report) {
    let line = (f64::NEG_INFINITY, f64::INFINITY);
    let specs = [
        DiffusionSpec::constant(0.3, 0.8, line, 0.5),
        DiffusionSpec::constant(-0.2, 1.5, line, -1.0),
        DiffusionSpec::gbm(0.05, 0.3, 1.0),
        DiffusionSpec::gbm(0.12, 0.4, 2.0),
        DiffusionSpec::gbm(0.02, 0.5, 1.5),
    ];
    let mut worst: f64 = 0.0;
    for spec in specs {
        let exact = build_scale(&spec).unwrap();
        let numeric = build_scale_numeric(&spec).unwrap();
        let y = spec.start;
        for i in 0..100 {
            let t = (i as f64 + 0.5) / 100.0;
            let z = if spec.interval.0 == 0.0 { y * (8.0 * t - 3.0).exp2() } else { y - 4.0 + 8.0 * t };
            let (a, b) = (exact.eval(z), numeric.eval(z));
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-300));
            let (za, zb) = (exact.inverse(a), numeric.inverse(a));
            worst = worst.max((za - z).abs() / z.abs().max(1.0));
            worst = worst.max((zb - z).abs() / z.abs().max(1.0));
        }
    }
    r.line("AC8", worst <= 1e-6, format!("closed-form vs quadrature scale functions and inverses, 5 diffusions x 100 points: max rel diff {worst:.2e} (tol 1e-6)"));
}

fn outputs() -> Vec<String> {
    let nu = Distribution::from_quantile_fn(|u| 3.0 * u * u, 256).unwrap();
    let rule = hall_embed(&nu, 1.2, &CaseTag::BoundedBelow { lower: 0.0 }).unwrap();
    let sol = optimize_rdu_quantile(&UtilityFn::Sqrt, &WeightingFn::Power { gamma: 0.7 }, 1.0, 512).unwrap();
    let spec = DiffusionSpec::brownian((0.0, f64::INFINITY), 1.2);
    let cfg = SimConfig { paths: 2000, seed: 5, ..Default::default() };
    let law = randstop::simulate::run_randomized(&spec, &rule, &cfg).unwrap();
    let (ua, ub) = csc_pair();
    let scale = build_scale(&DiffusionSpec::brownian((0.0, 5.0), 2.5)).unwrap();
    let grid = ThresholdGrid::new(2.5, scale.case(), 60, 60).unwrap();
    let cmp =
        compare_rule_classes(&Objective::Csc { utilities: vec![ua, ub] }, &scale, &grid, &CompareOptions::default())
            .unwrap();
    vec![to_json_string(&rule).unwrap(), to_json_string(&sol).unwrap(), law.to_csv(), to_json_string(&cmp).unwrap()]
}

fn ac9(r: &mut Report) {
    let first = outputs();
    let second = outputs();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let third = pool.install(outputs);
    let ok = first == second && first == third;
    let bytes: usize = first.iter().map(String::len).sum();
    r.line("AC9", ok, format!("repeated runs (incl. 3-thread pool) are byte-identical over {bytes} bytes of output"));
}

fn main() {
    let mut r = Report { failures: 0 };
    ac1(&mut r);
    ac2(&mut r);
    ac3(&mut r);
    ac4(&mut r);
    ac5(&mut r);
    ac6(&mut r);
    ac7(&mut r);
    ac8(&mut r);
    ac9(&mut r);
    if r.failures > 0 {
        eprintln!("{} acceptance criteria failed", r.failures);
        std::process::exit(1);
    }
}
