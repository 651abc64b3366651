//! Monte Carlo simulation of diffusions stopped by (randomized) threshold rules.
//!
//! Paths use Euler-Maruyama steps whose size adapts to the distance to the
//! nearest barrier, with a Brownian-bridge test for crossings inside a step.
//! Every path owns an independent ChaCha stream, so results do not depend on
//! the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{RandomizedRule, RuleSampler, ThresholdPair};
use crate::error::{Error, Result};
use crate::measures::{wasserstein1, Distribution};
use crate::objectives::Objective;
use crate::scale::{build_scale, DiffusionSpec, ScaleMap};

/// Step-size safety factor: a step moves at most about `distance / KAPPA`.
const KAPPA: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Smallest (and, without adaptation, the only) time step.
    pub dt: f64,
    /// Step budget per path; `max_steps * dt` is also the time horizon.
    pub max_steps: u64,
    pub paths: usize,
    pub seed: u64,
    /// Sample the exit point from the exact two-point law instead of simulating paths.
    pub exact_sampling: bool,
    /// Grow the step with the distance to the nearest barrier.
    pub adaptive: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 1e-3, max_steps: 10_000_000_000, paths: 10_000, seed: 0, exact_sampling: false, adaptive: true }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.max_steps == 0 {
            return Err(Error::Config("dt must be positive and max_steps non-zero".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("need at least one path".into()));
        }
        Ok(())
    }
}

/// One simulated path, in state coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_id: u64,
    pub a: f64,
    pub b: f64,
    pub stopped_value: f64,
    pub censored: bool,
}

/// Stopped values of a batch of paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLaw {
    pub records: Vec<PathRecord>,
}

impl EmpiricalLaw {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Stopped values of the uncensored paths.
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().filter(|r| !r.censored).map(|r| r.stopped_value).collect()
    }

    pub fn censored(&self) -> usize {
        self.records.iter().filter(|r| r.censored).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored() as f64 / self.len().max(1) as f64
    }

    pub fn distribution(&self) -> Result<Distribution> {
        Distribution::from_samples(&self.values())
    }

    pub fn mean(&self) -> f64 {
        let v = self.values();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn std(&self) -> f64 {
        let v = self.values();
        let m = self.mean();
        (v.iter().map(|z| (z - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64).sqrt()
    }

    /// `path_id,A,B,stopped_value,censored` rows.
    pub fn to_csv(&self) -> String {
        use crate::io::fmt_float;
        let mut s = String::from("path_id,A,B,stopped_value,censored\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.path_id,
                fmt_float(r.a),
                fmt_float(r.b),
                fmt_float(r.stopped_value),
                r.censored
            ));
        }
        s
    }
}

/// A diffusion ready for simulation.
#[derive(Clone, Debug)]
pub struct Simulator {
    spec: DiffusionSpec,
    scale: ScaleMap,
}

struct Outcome {
    value: f64,
    censored: bool,
}

impl Simulator {
    pub fn new(spec: &DiffusionSpec) -> Result<Self> {
        Ok(Simulator { spec: spec.clone(), scale: build_scale(spec)? })
    }

    pub fn scale(&self) -> &ScaleMap {
        &self.scale
    }

    /// Barriers in state coordinates for a pair given in natural scale,
    /// clamped to the absorbing endpoints of the interval.
    fn barriers(&self, pair: &ThresholdPair) -> (f64, f64) {
        let (lo, hi) = self.spec.interval;
        let y = self.spec.start;
        if pair.is_stop_now() {
            return (y, y);
        }
        if pair.is_level() {
            let l = self.scale.inverse(pair.a);
            return if l < y { (l, hi) } else { (lo, l) };
        }
        (self.scale.inverse(pair.a).max(lo), self.scale.inverse(pair.b).min(hi))
    }

    fn exit_exact<R: Rng>(&self, pair: &ThresholdPair, rng: &mut R) -> f64 {
        let x = pair.x;
        let z = if pair.is_stop_now() {
            x
        } else if pair.is_level() || pair.b == f64::INFINITY {
            pair.a
        } else if pair.a == f64::NEG_INFINITY {
            pair.b
        } else {
            let p_up = (x - pair.a) / (pair.b - pair.a);
            if rng.random::<f64>() < p_up {
                pair.b
            } else {
                pair.a
            }
        };
        self.scale.inverse(z)
    }

    fn exit_path<R: Rng>(&self, a: f64, b: f64, cfg: &SimConfig, rng: &mut R) -> Outcome {
        let mut y = self.spec.start;
        if y <= a {
            return Outcome { value: a, censored: false };
        }
        if y >= b {
            return Outcome { value: b, censored: false };
        }
        let horizon = cfg.max_steps as f64 * cfg.dt;
        let mut t = 0.0;
        for _ in 0..cfg.max_steps {
            let xi = self.spec.drift.eval(y);
            let sigma = self.spec.vol.eval(y).abs();
            let mut dt = cfg.dt;
            if cfg.adaptive {
                let d = (y - a).min(b - y);
                let mut h = (d / (KAPPA * sigma)).powi(2);
                if xi != 0.0 {
                    h = h.min(d / (KAPPA * xi.abs()));
                }
                dt = dt.max(h);
            }
            let z: f64 = rng.sample(StandardNormal);
            let next = y + xi * dt + sigma * dt.sqrt() * z;
            t += dt;
            if next <= a {
                return Outcome { value: a, censored: false };
            }
            if next >= b {
                return Outcome { value: b, censored: false };
            }
            let var = sigma * sigma * dt;
            let u: f64 = rng.random();
            let pa = if a.is_finite() { (-2.0 * (y - a) * (next - a) / var).exp() } else { 0.0 };
            let pb = if b.is_finite() { (-2.0 * (b - y) * (b - next) / var).exp() } else { 0.0 };
            if u < pa {
                return Outcome { value: a, censored: false };
            }
            if u < pa + pb {
                return Outcome { value: b, censored: false };
            }
            y = next;
            if t >= horizon {
                break;
            }
        }
        Outcome { value: y, censored: true }
    }

    fn run_one(&self, path_id: u64, pair: ThresholdPair, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> PathRecord {
        let (a, b) = self.barriers(&pair);
        let out = if cfg.exact_sampling {
            Outcome { value: self.exit_exact(&pair, rng), censored: false }
        } else {
            self.exit_path(a, b, cfg, rng)
        };
        PathRecord { path_id, a, b, stopped_value: out.value, censored: out.censored }
    }

    /// Paths stopped at the exit of a fixed pair (natural-scale coordinates).
    pub fn run_threshold(&self, pair: &ThresholdPair, cfg: &SimConfig) -> Result<EmpiricalLaw> {
        cfg.validate()?;
        pair.validate(&self.scale.case())?;
        let records = (0..cfg.paths as u64)
            .into_par_iter()
            .map(|id| {
                let mut rng = path_rng(cfg.seed, id);
                self.run_one(id, *pair, cfg, &mut rng)
            })
            .collect();
        Ok(EmpiricalLaw { records })
    }

    /// Paths stopped by a randomized rule (natural-scale coordinates): each
    /// path draws its pair first and then runs.
    pub fn run_randomized(&self, rule: &RandomizedRule, cfg: &SimConfig) -> Result<EmpiricalLaw> {
        cfg.validate()?;
        if rule.case != self.scale.case() || rule.x != self.scale.start() {
            return Err(Error::InvalidRule("rule does not match the diffusion's natural scale".into()));
        }
        let sampler = RuleSampler::new(rule)?;
        let records = (0..cfg.paths as u64)
            .into_par_iter()
            .map(|id| {
                let mut rng = path_rng(cfg.seed, id);
                let pair = sampler.sample(&mut rng);
                self.run_one(id, pair, cfg, &mut rng)
            })
            .collect();
        Ok(EmpiricalLaw { records })
    }
}

fn path_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn run_threshold(spec: &DiffusionSpec, pair: &ThresholdPair, cfg: &SimConfig) -> Result<EmpiricalLaw> {
    Simulator::new(spec)?.run_threshold(pair, cfg)
}

pub fn run_randomized(spec: &DiffusionSpec, rule: &RandomizedRule, cfg: &SimConfig) -> Result<EmpiricalLaw> {
    Simulator::new(spec)?.run_randomized(rule, cfg)
}

/// Critical value `c(α)` of the Kolmogorov-Smirnov statistic scaled by `√n`.
pub fn ks_critical(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `law`.
pub fn ks_statistic(samples: &[f64], law: &Distribution) -> f64 {
    let mut s: Vec<f64> = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let z = s[i];
        let below = i as f64 / n;
        while i < s.len() && s[i] == z {
            i += 1;
        }
        let upto = i as f64 / n;
        d = d.max((upto - law.cdf(z)).abs()).max((below - law.cdf_left(z)).abs());
    }
    for p in law.pieces() {
        for z in [p.lo(), p.hi()] {
            let k = s.partition_point(|&v| v <= z) as f64 / n;
            let k_left = s.partition_point(|&v| v < z) as f64 / n;
            d = d.max((k - law.cdf(z)).abs()).max((k_left - law.cdf_left(z)).abs());
        }
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let z = a[i].min(b[j]);
        while i < a.len() && a[i] <= z {
            i += 1;
        }
        while j < b.len() && b[j] <= z {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomCheck {
    pub loc: f64,
    pub expected: f64,
    pub observed: f64,
    pub z_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveCheck {
    pub kind: String,
    pub analytic: f64,
    pub empirical: f64,
}

/// Comparison of a simulated stopped law with its target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub status: Status,
    pub paths: usize,
    pub censored_fraction: f64,
    pub w1: f64,
    pub w1_tolerance: f64,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub target_mean: f64,
    pub sample_mean: f64,
    pub atoms: Vec<AtomCheck>,
    pub objectives: Vec<ObjectiveCheck>,
}

/// Fewer uncensored paths than this make a verification inconclusive.
pub const MIN_VERIFY_PATHS: usize = 100;
/// Largest censored fraction accepted by a verification.
pub const MAX_CENSORED: f64 = 1e-3;

/// Simulates `rule` and compares the stopped law with `target` (state coordinates).
pub fn verify_embedding(
    spec: &DiffusionSpec,
    target: &Distribution,
    rule: &RandomizedRule,
    cfg: &SimConfig,
    objectives: &[Objective],
) -> Result<VerificationReport> {
    let law = run_randomized(spec, rule, cfg)?;
    verify_against(&law, target, objectives)
}

/// Verification of already simulated paths.
pub fn verify_against(
    law: &EmpiricalLaw,
    target: &Distribution,
    objectives: &[Objective],
) -> Result<VerificationReport> {
    let values = law.values();
    let n = values.len();
    let censored_fraction = law.censored_fraction();
    if n == 0 {
        return Ok(VerificationReport {
            status: Status::Inconclusive,
            paths: law.len(),
            censored_fraction,
            w1: f64::NAN,
            w1_tolerance: f64::NAN,
            ks_statistic: f64::NAN,
            ks_critical: f64::NAN,
            target_mean: target.mean(),
            sample_mean: f64::NAN,
            atoms: Vec::new(),
            objectives: Vec::new(),
        });
    }
    let emp = Distribution::from_samples(&values)?;
    let w1 = wasserstein1(&emp, target)?;
    let tol = 0.02f64.max(5.0 * target.variance().sqrt() / (n as f64).sqrt());
    let ks = ks_statistic(&values, target);
    let ks_crit = ks_critical(0.01) / (n as f64).sqrt();
    let mut atoms = Vec::new();
    if target.is_atomic() {
        for (loc, p) in target.atoms() {
            let observed = values.iter().filter(|&&v| v == loc).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let z_score = if se > 0.0 { (observed - p) / se } else { 0.0 };
            atoms.push(AtomCheck { loc, expected: p, observed, z_score });
        }
    }
    let mut checks = Vec::new();
    for obj in objectives {
        checks.push(ObjectiveCheck {
            kind: obj.name().into(),
            analytic: obj.evaluate(target)?,
            empirical: obj.evaluate(&emp)?,
        });
    }
    let status = if n < MIN_VERIFY_PATHS {
        Status::Inconclusive
    } else if censored_fraction > MAX_CENSORED || w1 > tol {
        Status::Fail
    } else {
        Status::Pass
    };
    Ok(VerificationReport {
        status,
        paths: law.len(),
        censored_fraction,
        w1,
        w1_tolerance: tol,
        ks_statistic: ks,
        ks_critical: ks_crit,
        target_mean: target.mean(),
        sample_mean: emp.mean(),
        atoms,
        objectives: checks,
    })
}
