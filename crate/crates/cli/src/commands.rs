use std::path::Path;

use anyhow::{Context, Result};
use randstop::embedding::rule_atoms_csv;
use randstop::io::{ext_real_pair, to_json_string};
use randstop::objectives::Objective;
use randstop::optimize::{
    compare_rule_classes, optimize_csc_family, optimize_rdu_quantile, BestRule, CompareOptions, ThresholdGrid,
};
use randstop::simulate::{run_randomized, verify_against, VerificationReport, MIN_VERIFY_PATHS};
use randstop::{approximate_by_atoms, build_scale, hall_embed, wasserstein1, Direction, Distribution};
use serde::Serialize;

use crate::config::RunConfig;
use crate::BadInput;

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    write(out, name, &to_json_string(value)?)
}

#[derive(Serialize)]
struct EmbedCheck {
    pass: bool,
    w1: f64,
    tolerance: f64,
    max_atom_error: f64,
    total_mass: f64,
    v_star: f64,
    c: f64,
}

/// Largest mass difference over the atoms of either law.
fn max_atom_error(p: &Distribution, q: &Distribution) -> f64 {
    let mut worst: f64 = 0.0;
    for (z, m) in p.atoms() {
        worst = worst.max((m - (q.cdf(z) - q.cdf_left(z))).abs());
    }
    for (z, m) in q.atoms() {
        worst = worst.max((m - (p.cdf(z) - p.cdf_left(z))).abs());
    }
    worst
}

/// Returns whether the pushforward check passed.
pub fn embed(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let spec = cfg.diffusion()?;
    let target = cfg.target.as_ref().ok_or_else(|| BadInput("embed needs a \"target\" law".into()))?;
    let scale = build_scale(spec)?;
    let natural = scale.pushforward(target, Direction::Forward)?;
    let (rule, diag) = randstop::hall_embed_with_diagnostics(&natural, scale.start(), &scale.case())?;
    let pushed = scale.pushforward(&rule.pushforward()?, Direction::Inverse)?;
    let w1 = wasserstein1(&pushed, target)?;
    let tolerance = cfg.tolerance * target.integrate(f64::abs).max(1.0);
    let err = max_atom_error(&pushed, target);
    let check = EmbedCheck {
        pass: w1 <= tolerance && err <= 1e-10,
        w1,
        tolerance,
        max_atom_error: err,
        total_mass: rule.total_mass(),
        v_star: diag.v_star,
        c: diag.c,
    };
    write_json(out, "rule.json", &rule)?;
    write_json(out, "check.json", &check)?;
    write(out, "rule_atoms.csv", &rule_atoms_csv(&approximate_by_atoms(&rule, cfg.cells)?)?)?;
    Ok(check.pass)
}

#[derive(Serialize)]
struct SimSummary {
    #[serde(flatten)]
    report: VerificationReport,
    seed: u64,
    exact_sampling: bool,
    warnings: Vec<String>,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.diffusion()?;
    let scale = build_scale(spec)?;
    let rule = match (&cfg.rule, &cfg.target) {
        (Some(r), _) => r.clone(),
        (None, Some(t)) => {
            let natural = scale.pushforward(t, Direction::Forward)?;
            hall_embed(&natural, scale.start(), &scale.case())?
        }
        (None, None) => return Err(BadInput("simulate needs a \"rule\" or a \"target\"".into()).into()),
    };
    let target = match &cfg.target {
        Some(t) => t.clone(),
        None => scale.pushforward(&rule.pushforward()?, Direction::Inverse)?,
    };
    let law = run_randomized(spec, &rule, &cfg.simulation)?;
    let report = verify_against(&law, &target, &cfg.objectives)?;
    let mut warnings = Vec::new();
    if law.len() - law.censored() < MIN_VERIFY_PATHS {
        warnings.push(format!("fewer than {MIN_VERIFY_PATHS} stopped paths: no pass/fail verdict"));
    }
    if law.censored() > 0 {
        warnings.push(format!(
            "{} paths reached the horizon of {} time units",
            law.censored(),
            cfg.simulation.max_steps as f64 * cfg.simulation.dt
        ));
    }
    write(out, "paths.csv", &law.to_csv())?;
    let summary =
        SimSummary { report, seed: cfg.simulation.seed, exact_sampling: cfg.simulation.exact_sampling, warnings };
    write_json(out, "summary.json", &summary)
}

fn rdu_parts(obj: &Objective) -> Result<(&randstop::objectives::UtilityFn, &randstop::objectives::WeightingFn)> {
    match obj {
        Objective::Rdu { utility, weighting } => Ok((utility, weighting)),
        _ => Err(BadInput(format!("optimize-rdu needs an rdu objective, got {}", obj.name())).into()),
    }
}

pub fn optimize_rdu(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (v, w) = rdu_parts(cfg.objective()?)?;
    let y = match (cfg.start, &cfg.diffusion) {
        (Some(y), _) => y,
        (None, Some(d)) => d.start,
        (None, None) => return Err(BadInput("optimize-rdu needs a \"start\" or a \"diffusion\"".into()).into()),
    };
    let sol = optimize_rdu_quantile(v, w, y, cfg.cells)?;
    let BestRule::Randomized { rule } = &sol.report.best else {
        return Err(randstop::Error::Numeric("quantile optimum has no rule".into()).into());
    };
    let mut csv = String::from("u,quantile\n");
    for (u, g) in &sol.quantile {
        csv.push_str(&format!("{},{}\n", randstop::io::fmt_float(*u), randstop::io::fmt_float(*g)));
    }
    write_json(out, "report.json", &sol)?;
    write(out, "quantile.csv", &csv)?;
    write_json(out, "rule.json", rule)
}

pub fn optimize_csc(cfg: &RunConfig, out: &Path) -> Result<()> {
    let obj = cfg.objective()?;
    let Objective::Csc { utilities } = obj else {
        return Err(BadInput(format!("optimize-csc needs a csc objective, got {}", obj.name())).into());
    };
    match &cfg.laws {
        Some((l1, l2)) => {
            let sol = optimize_csc_family(utilities, l1, l2)?;
            write_json(out, "report.json", &sol)?;
            if let Some(spec) = &cfg.diffusion {
                let scale = build_scale(spec)?;
                let law = Distribution::mixture(&[(sol.theta, l1), (1.0 - sol.theta, l2)])?;
                let natural = scale.pushforward(&law, Direction::Forward)?;
                write_json(out, "rule.json", &hall_embed(&natural, scale.start(), &scale.case())?)?;
            }
            Ok(())
        }
        None => {
            let report = compare_report(cfg, obj)?;
            write_json(out, "report.json", &report)?;
            write_json(out, "rule.json", &report.best_randomized_rule)
        }
    }
}

fn compare_report(cfg: &RunConfig, obj: &Objective) -> Result<randstop::optimize::CompareReport> {
    let scale = build_scale(cfg.diffusion()?)?;
    let grid = ThresholdGrid::new(scale.start(), scale.case(), cfg.grid.0, cfg.grid.1)?;
    let opts = CompareOptions { rdu_cells: cfg.cells, ..Default::default() };
    Ok(compare_rule_classes(obj, &scale, &grid, &opts)?)
}

pub fn compare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = compare_report(cfg, cfg.objective()?)?;
    write_json(out, "compare.json", &report)
}

#[derive(Serialize)]
struct ScaleInfo {
    case: randstop::CaseTag,
    #[serde(with = "ext_real_pair")]
    interval: (f64, f64),
    #[serde(with = "ext_real_pair")]
    image: (f64, f64),
    start: f64,
    closed_form: bool,
    identity: bool,
    table: Vec<(f64, f64)>,
}

pub fn scale_info(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scale = build_scale(cfg.diffusion()?)?;
    let info = ScaleInfo {
        case: scale.case(),
        interval: scale.interval(),
        image: scale.image(),
        start: scale.start(),
        closed_form: scale.is_closed_form(),
        identity: scale.is_identity(),
        table: scale.table(101),
    };
    write_json(out, "scale.json", &info)
}
