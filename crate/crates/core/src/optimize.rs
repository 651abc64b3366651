//! Optimization over pure and randomized threshold rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{hall_embed, threshold_law, RandomizedRule, ThresholdPair};
use crate::error::{Error, Result};
use crate::measures::{Distribution, DEFAULT_GRID_SIZE};
use crate::numeric;
use crate::objectives::{eval_rdu, eval_rdu_quantile, Objective, Shape, UtilityFn, WeightingFn};
use crate::scale::{CaseTag, ScaleMap};

/// Finite grid of candidate thresholds on either side of `x`, in natural scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub x: f64,
    pub case: CaseTag,
    /// Candidates `a <= x`, ascending; `-∞` appears last when legal.
    pub a_values: Vec<f64>,
    /// Candidates `b >= x`, ascending; `+∞` appears last when legal.
    pub b_values: Vec<f64>,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn side_values(x: f64, end: f64, n: usize, sentinel_ok: bool) -> Vec<f64> {
    let dir = if end > x { 1.0 } else { -1.0 };
    let mut out = Vec::with_capacity(n);
    if end.is_finite() {
        for j in 0..n {
            let t = j as f64 / (n - 1) as f64;
            out.push(if j + 1 == n { end } else { x + (end - x) * smoothstep(t) });
        }
    } else {
        let len = x.abs().max(1.0);
        for j in 0..n - 1 {
            let t = j as f64 / (n - 1) as f64;
            out.push(x + dir * len * t / (1.0 - t));
        }
        if sentinel_ok {
            out.push(end);
        }
    }
    out
}

impl ThresholdGrid {
    /// Nested grid: doubling `n - 1` keeps every previous point.
    pub fn new(x: f64, case: CaseTag, n_a: usize, n_b: usize) -> Result<Self> {
        if n_a < 2 || n_b < 2 {
            return Err(Error::Config("grid sizes must be at least 2".into()));
        }
        if !(case.lower() < x && x < case.upper()) {
            return Err(Error::Config(format!("x = {x} is not interior to the state space")));
        }
        let (lo, hi) = (case.lower(), case.upper());
        let mut a_values = side_values(x, lo, n_a, true);
        a_values.reverse();
        // the -∞ sentinel sorts first after reversal; keep it last instead
        if a_values.first() == Some(&f64::NEG_INFINITY) {
            a_values.remove(0);
            a_values.push(f64::NEG_INFINITY);
        }
        let b_values = side_values(x, hi, n_b, true);
        Ok(ThresholdGrid { x, case, a_values, b_values })
    }

    /// Adds finite points, each to the side of `x` it lies on.
    pub fn with_points(mut self, points: &[f64]) -> Self {
        for &p in points {
            if !p.is_finite() || p < self.case.lower() || p > self.case.upper() {
                continue;
            }
            if p <= self.x && !self.a_values.contains(&p) {
                self.a_values.push(p);
            }
            if p >= self.x && !self.b_values.contains(&p) {
                self.b_values.push(p);
            }
        }
        let key = |v: &f64| if v.is_finite() { *v } else { f64::MAX };
        self.a_values.sort_by(|p, q| key(p).total_cmp(&key(q)));
        self.b_values.sort_by(|p, q| p.total_cmp(q));
        self
    }

    /// Legal pair at the given indices.
    pub fn pair(&self, i: usize, j: usize) -> Option<ThresholdPair> {
        let (a, b) = (self.a_values[i], self.b_values[j]);
        if a == f64::NEG_INFINITY && b == f64::INFINITY {
            return None;
        }
        Some(ThresholdPair::new(a, b, self.x))
    }

    /// Finite grid points, ascending.
    pub fn support_points(&self) -> Vec<f64> {
        let mut pts: Vec<f64> =
            self.a_values.iter().chain(self.b_values.iter()).copied().filter(|v| v.is_finite()).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Optimal rule of a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BestRule {
    Pure { pair: ThresholdPair },
    Randomized { rule: RandomizedRule },
    Target { law: Distribution },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub evaluations: usize,
    pub iterations: usize,
    pub residual: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub value: f64,
    pub best: BestRule,
    pub multiplier: Option<f64>,
    pub mixing_weight: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Checks that the objective is defined on the whole state interval.
fn check_domain(obj: &Objective, scale: &ScaleMap) -> Result<()> {
    let (dlo, dhi) = obj.domain();
    let (lo, hi) = scale.interval();
    if lo < dlo || hi > dhi {
        return Err(Error::Config(format!(
            "objective domain [{dlo}, {dhi}] does not contain the state interval [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Law of `Y` at the exit of a pair, given precomputed `s⁻¹` values.
/// Law of the stopped original process, or `None` when the pair would put mass at infinity.
fn pair_law_y(pair: &ThresholdPair, case: &CaseTag, ya: f64, yb: f64, y: f64) -> Result<Option<Distribution>> {
    let law = threshold_law(pair, case)?;
    let atoms: Vec<(f64, f64)> = law
        .atoms()
        .map(|(z, m)| {
            let v = if z == pair.x {
                y
            } else if z == pair.a {
                ya
            } else {
                yb
            };
            (v, m)
        })
        .collect();
    if atoms.iter().any(|p| !p.0.is_finite()) {
        return Ok(None);
    }
    Distribution::from_atoms(&atoms).map(Some)
}

struct Candidate {
    value: f64,
    i: usize,
    j: usize,
}

/// Best and coarse-grid best of one row, and the number of evaluations.
type RowBest = (Option<Candidate>, Option<Candidate>, usize);

fn better(c: &Candidate, value: f64) -> bool {
    value > c.value
}

/// Exhaustive search over the pure rules of a grid.
///
/// Ties are broken toward the lexicographically smallest `(a, b)`. The best
/// value over the half-resolution subgrid is tracked as well and a warning is
/// issued when refinement moved the optimum by more than `1e-6`.
pub fn optimize_pure_thresholds(obj: &Objective, grid: &ThresholdGrid, scale: &ScaleMap) -> Result<OptimReport> {
    obj.validate()?;
    check_domain(obj, scale)?;
    let case = grid.case;
    let y = scale.start();
    let ya: Vec<f64> = grid.a_values.iter().map(|&a| scale.inverse(a)).collect();
    let yb: Vec<f64> = grid.b_values.iter().map(|&b| scale.inverse(b)).collect();
    let rows: Vec<Result<RowBest>> = (0..grid.a_values.len())
        .into_par_iter()
        .map(|i| {
            let mut best: Option<Candidate> = None;
            let mut coarse: Option<Candidate> = None;
            let mut evals = 0;
            for (j, &yj) in yb.iter().enumerate() {
                let Some(pair) = grid.pair(i, j) else { continue };
                let Some(law) = pair_law_y(&pair, &case, ya[i], yj, y)? else { continue };
                let v = obj.evaluate(&law)?;
                evals += 1;
                if best.as_ref().is_none_or(|c| better(c, v)) {
                    best = Some(Candidate { value: v, i, j });
                }
                if i % 2 == 0 && j % 2 == 0 && coarse.as_ref().is_none_or(|c| better(c, v)) {
                    coarse = Some(Candidate { value: v, i, j });
                }
            }
            Ok((best, coarse, evals))
        })
        .collect();
    let mut best: Option<Candidate> = None;
    let mut coarse: Option<Candidate> = None;
    let mut evaluations = 0;
    for row in rows {
        let (b, c, e) = row?;
        evaluations += e;
        if let Some(b) = b {
            if best.as_ref().is_none_or(|cur| better(cur, b.value)) {
                best = Some(b);
            }
        }
        if let Some(c) = c {
            if coarse.as_ref().is_none_or(|cur| better(cur, c.value)) {
                coarse = Some(c);
            }
        }
    }
    let best = best.ok_or_else(|| Error::Config("threshold grid has no legal pair".into()))?;
    let mut diagnostics = Diagnostics { evaluations, ..Default::default() };
    if let Some(c) = coarse {
        let shift = (best.value - c.value).abs();
        diagnostics.residual = shift;
        if shift > 1e-6 {
            diagnostics
                .warnings
                .push(format!("grid refinement changed the optimum by {shift:.3e}; the grid may be too coarse"));
        }
    }
    let pair = grid.pair(best.i, best.j).expect("legal").canonical();
    Ok(OptimReport {
        value: best.value,
        best: BestRule::Pure { pair },
        multiplier: None,
        mixing_weight: None,
        diagnostics,
    })
}

/// Optimum of rank-dependent utility over laws on `[0, ∞)` with mean `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RduSolution {
    pub report: OptimReport,
    pub lambda: f64,
    pub budget_residual: f64,
    pub lagrangian_residual: f64,
    /// Rank-dependent value of the cell-mean discretization of the optimum.
    pub discretized_value: f64,
    /// `(u, G*(u))` at cell midpoints.
    pub quantile: Vec<(f64, f64)>,
    pub target: Distribution,
}

/// `G*` as a function of the upper-tail level `q = 1 - u`.
fn rdu_quantile(v: &UtilityFn, w: &WeightingFn, lambda: f64, q: f64) -> f64 {
    let dw = w.derivative(q);
    let g = if dw > 0.0 { v.inverse_derivative(lambda / dw).unwrap_or(f64::NAN) } else { 0.0 };
    g.max(0.0)
}

/// Maximizes `∫ v(G(u)) w'(1-u) du` over quantile functions of laws on
/// `[0, ∞)` with mean `y`.
///
/// The optimum is `G*(u) = (v')⁻¹(λ / w'(1-u))` with `λ` fixed by the budget
/// `∫ G* = y`, which is solved for `ln λ` with Brent's method. The optimal law
/// is realized by a randomized threshold rule for a natural-scale process on
/// `[0, ∞)` started at `y`.
pub fn optimize_rdu_quantile(v: &UtilityFn, w: &WeightingFn, y: f64, cells: usize) -> Result<RduSolution> {
    v.validate()?;
    w.validate()?;
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::Config(format!("start must be positive, got {y}")));
    }
    if !matches!(v.shape(), Shape::Concave) || v.inverse_derivative(1.0).is_none() {
        return Err(Error::Unsupported(
            "the quantile optimum needs a strictly concave utility with invertible derivative; use a grid search"
                .into(),
        ));
    }
    if !matches!(w.shape(), Shape::Concave | Shape::Linear) {
        return Err(Error::Unsupported(
            "the quantile optimum needs a concave weighting function; use a grid search".into(),
        ));
    }
    let budget = |lambda: f64| numeric::integrate_unit(&|_u, q| rdu_quantile(v, w, lambda, q));
    let lambda0 = v.derivative(y);
    let b0 = budget(lambda0);
    if !b0.is_finite() {
        return Err(Error::Numeric("the budget integral diverges".into()));
    }
    let mut iterations = 0;
    let lambda = if numeric::rel_diff(b0, y, 1.0) <= 1e-15 {
        lambda0
    } else {
        let (mut lo, mut hi) = (lambda0, lambda0);
        if b0 > y {
            while budget(hi) > y {
                hi *= 2.0;
                iterations += 1;
                if iterations > 400 {
                    return Err(Error::Numeric("cannot bracket the multiplier".into()));
                }
            }
        } else {
            while budget(lo) < y {
                lo *= 0.5;
                iterations += 1;
                if iterations > 400 {
                    return Err(Error::Numeric("cannot bracket the multiplier".into()));
                }
            }
        }
        let l = numeric::brent(|t| budget(t.exp()) / y - 1.0, lo.ln(), hi.ln(), 1e-15)?;
        l.exp()
    };
    let budget_residual = (budget(lambda) - y).abs() / y;
    let g = |q: f64| rdu_quantile(v, w, lambda, q);
    let value = eval_rdu_quantile(v, w, |_u, q| g(q))?;

    let mut lagrangian_residual: f64 = 0.0;
    let mut warnings = Vec::new();
    for i in 0..100 {
        let u = (i as f64 + 0.5) / 100.0;
        let q = 1.0 - u;
        let gs = g(q);
        let dw = w.derivative(q);
        if gs > 0.0 {
            let foc = (dw * v.derivative(gs) - lambda).abs() / lambda;
            lagrangian_residual = lagrangian_residual.max(foc);
        }
        let phi = |z: f64| dw * v.value(z) - lambda * z;
        let here = phi(gs);
        for z in [gs * (1.0 - 1e-3), gs * (1.0 + 1e-3) + 1e-12] {
            if phi(z) > here + 1e-12 * here.abs().max(1.0) {
                warnings.push(format!("pointwise Lagrangian not maximized at u = {u}"));
            }
        }
    }

    let target = Distribution::from_quantile_cells(|_u, q| g(q), cells)?;
    let discretized_value = eval_rdu(v, w, &target)?;
    let rule = hall_embed(&target, y, &CaseTag::BoundedBelow { lower: 0.0 })?;
    let quantile = (0..cells)
        .map(|i| {
            let u = (i as f64 + 0.5) / cells as f64;
            (u, g((cells - i) as f64 / cells as f64 - 0.5 / cells as f64))
        })
        .collect();
    let report = OptimReport {
        value,
        best: BestRule::Randomized { rule },
        multiplier: Some(lambda),
        mixing_weight: None,
        diagnostics: Diagnostics { evaluations: 0, iterations, residual: budget_residual, warnings },
    };
    Ok(RduSolution { report, lambda, budget_residual, lagrangian_residual, discretized_value, quantile, target })
}

/// Optimal mixture of two laws under cautious stochastic choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CscSolution {
    pub report: OptimReport,
    pub theta: f64,
    pub value: f64,
    /// Certainty equivalents at the optimum, one per utility.
    pub certainty_equivalents: Vec<f64>,
    /// True when the optimum is an interior crossing of certainty equivalents.
    pub crossing: bool,
    /// CSC values of `law1` (θ = 1) and `law2` (θ = 0).
    pub endpoint_values: (f64, f64),
}

/// Mixture weight on the first law maximizing the smallest certainty
/// equivalent, from expected utilities `e1[k]`, `e2[k]` of the two laws.
fn mixture_optimum(family: &[UtilityFn], e1: &[f64], e2: &[f64]) -> (f64, f64, bool) {
    let ce = |k: usize, t: f64| family[k].inverse(t * e1[k] + (1.0 - t) * e2[k]);
    let (inc, dec): (Vec<usize>, Vec<usize>) = (0..family.len()).partition(|&k| e1[k] >= e2[k]);
    let env = |set: &[usize], t: f64| set.iter().map(|&k| ce(k, t)).fold(f64::INFINITY, f64::min);
    let csc = |t: f64| env(&inc, t).min(env(&dec, t));
    let h = |t: f64| env(&inc, t) - env(&dec, t);
    let theta = if dec.is_empty() {
        1.0
    } else if inc.is_empty() || h(0.0) >= 0.0 {
        0.0
    } else if h(1.0) <= 0.0 {
        1.0
    } else {
        numeric::bisect(h, 0.0, 1.0, 1e-16).unwrap_or(0.5)
    };
    let crossing = theta > 0.0 && theta < 1.0;
    let mut best = (theta, csc(theta), crossing);
    for t in [1.0, 0.0] {
        let v = csc(t);
        if v > best.1 {
            best = (t, v, false);
        }
    }
    best
}

/// Best mixture `θ law1 + (1-θ) law2` for the smallest certainty equivalent
/// of a family of utilities.
pub fn optimize_csc_family(family: &[UtilityFn], law1: &Distribution, law2: &Distribution) -> Result<CscSolution> {
    if family.is_empty() {
        return Err(Error::Config("empty utility family".into()));
    }
    let mut e1 = Vec::with_capacity(family.len());
    let mut e2 = Vec::with_capacity(family.len());
    for u in family {
        u.validate()?;
        e1.push(crate::objectives::eval_eu(u, law1)?);
        e2.push(crate::objectives::eval_eu(u, law2)?);
    }
    let (theta, value, crossing) = mixture_optimum(family, &e1, &e2);
    let ces: Vec<f64> = (0..family.len()).map(|k| family[k].inverse(theta * e1[k] + (1.0 - theta) * e2[k])).collect();
    let end = |t: f64| {
        (0..family.len()).map(|k| family[k].inverse(t * e1[k] + (1.0 - t) * e2[k])).fold(f64::INFINITY, f64::min)
    };
    let residual = if ces.len() == 2 { (ces[0] - ces[1]).abs() } else { 0.0 };
    let law = Distribution::mixture(&[(theta, law1), (1.0 - theta, law2)])?;
    let report = OptimReport {
        value,
        best: BestRule::Target { law },
        multiplier: None,
        mixing_weight: Some(theta),
        diagnostics: Diagnostics { evaluations: 2 * family.len(), iterations: 0, residual, warnings: Vec::new() },
    };
    Ok(CscSolution {
        report,
        theta,
        value,
        certainty_equivalents: ces,
        crossing,
        endpoint_values: (end(1.0), end(0.0)),
    })
}

/// Two-utility special case of [`optimize_csc_family`].
pub fn optimize_csc_mixture(
    ua: &UtilityFn,
    ub: &UtilityFn,
    law1: &Distribution,
    law2: &Distribution,
) -> Result<CscSolution> {
    optimize_csc_family(&[ua.clone(), ub.clone()], law1, law2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    #[serde(rename = "v_star_TT")]
    pub v_star_tt: f64,
    #[serde(rename = "v_star_TR")]
    pub v_star_tr: f64,
    pub gap: f64,
    pub best_pure_rule: ThresholdPair,
    pub best_randomized_rule: RandomizedRule,
    pub method: String,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    /// Quantile cells used to realize a rank-dependent optimum.
    pub rdu_cells: usize,
    /// Number of best pure laws paired up when a CSC family has more than two utilities.
    pub csc_candidates: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions { rdu_cells: DEFAULT_GRID_SIZE, csc_candidates: 60 }
    }
}

/// Upper concave hull of points sorted by abscissa.
fn upper_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Best value over pure rules against best value over randomized rules on
/// the same grid.
pub fn compare_rule_classes(
    obj: &Objective,
    scale: &ScaleMap,
    grid: &ThresholdGrid,
    opts: &CompareOptions,
) -> Result<CompareReport> {
    let pure = optimize_pure_thresholds(obj, grid, scale)?;
    let BestRule::Pure { pair: best_pure } = pure.best else { unreachable!("grid search returns a pair") };
    let mut warnings = pure.diagnostics.warnings.clone();
    let x = grid.x;
    let case = grid.case;
    let y = scale.start();
    let (v_tr, rule, method) = match obj {
        Objective::Eu { utility } => {
            let mut pts: Vec<(f64, f64)> = grid
                .support_points()
                .into_iter()
                .filter(|&z| scale.inverse(z).is_finite())
                .map(|z| (z, utility.value(scale.inverse(z))))
                .collect();
            pts.dedup_by(|p, q| p.0 == q.0);
            let (value, law_pair) = eu_hull_optimum(&pts, x, &case)?;
            (value, RandomizedRule::pure(law_pair, case), "concave hull of the utility over grid points".to_string())
        }
        Objective::Rdu { utility, weighting } => {
            if !scale.is_identity() || case != (CaseTag::BoundedBelow { lower: 0.0 }) {
                return Err(Error::Config(
                    "rank-dependent comparison needs a natural-scale process on [0, inf)".into(),
                ));
            }
            let sol = optimize_rdu_quantile(utility, weighting, x, opts.rdu_cells)?;
            warnings.extend(sol.report.diagnostics.warnings.iter().cloned());
            let BestRule::Randomized { rule } = sol.report.best else { unreachable!() };
            (sol.report.value, rule, "quantile optimum with multiplier".to_string())
        }
        Objective::Csc { utilities } => {
            let (value, rule) = csc_randomized_optimum(utilities, grid, scale, y, opts)?;
            (value, rule, "mixtures along the upper-right hull of certainty-equivalent coordinates".to_string())
        }
    };
    if v_tr < pure.value - 1e-10 {
        return Err(Error::Numeric(format!("randomized optimum {v_tr} is below the pure optimum {}", pure.value)));
    }
    Ok(CompareReport {
        v_star_tt: pure.value,
        v_star_tr: v_tr,
        gap: v_tr - pure.value,
        best_pure_rule: best_pure,
        best_randomized_rule: rule,
        method,
        warnings,
    })
}

/// Largest expected utility over laws on the points with an attainable mean,
/// and a pair realizing it.
fn eu_hull_optimum(pts: &[(f64, f64)], x: f64, case: &CaseTag) -> Result<(f64, ThresholdPair)> {
    if let CaseTag::WholeLine = case {
        let best = pts
            .iter()
            .fold(None::<(f64, f64)>, |acc, p| match acc {
                Some(a) if a.1 >= p.1 => Some(a),
                _ => Some(*p),
            })
            .ok_or_else(|| Error::Config("empty grid".into()))?;
        return Ok((best.1, ThresholdPair::new(best.0, best.0, x)));
    }
    let hull = upper_hull(pts);
    let k = hull.partition_point(|p| p.0 < x);
    let at_x = if k < hull.len() && hull[k].0 == x {
        (hull[k].1, ThresholdPair::stop_now(x))
    } else if k == 0 || k == hull.len() {
        return Err(Error::Config("grid does not bracket the start".into()));
    } else {
        let (l, r) = (hull[k - 1], hull[k]);
        let t = (x - l.0) / (r.0 - l.0);
        (l.1 + t * (r.1 - l.1), ThresholdPair::new(l.0, r.0, x))
    };
    let mut best = at_x;
    let one_sided = |p: &(f64, f64)| match case {
        CaseTag::BoundedBelow { .. } if p.0 < x => Some(ThresholdPair::new(p.0, f64::INFINITY, x)),
        CaseTag::BoundedAbove { .. } if p.0 > x => Some(ThresholdPair::new(f64::NEG_INFINITY, p.0, x)),
        _ => None,
    };
    for p in &hull {
        if let Some(pair) = one_sided(p) {
            if p.1 > best.0 {
                best = (p.1, pair);
            }
        }
    }
    Ok(best)
}

fn csc_randomized_optimum(
    family: &[UtilityFn],
    grid: &ThresholdGrid,
    scale: &ScaleMap,
    y: f64,
    opts: &CompareOptions,
) -> Result<(f64, RandomizedRule)> {
    let case = grid.case;
    let na = grid.a_values.len();
    let nb = grid.b_values.len();
    let all: Vec<ThresholdPair> =
        (0..na).flat_map(|i| (0..nb).filter_map(move |j| grid.pair(i, j))).map(ThresholdPair::canonical).collect();
    let evaluated: Vec<Option<(ThresholdPair, Vec<f64>)>> = all
        .par_iter()
        .map(|p| {
            let Some(law) = pair_law_y(p, &case, scale.inverse(p.a), scale.inverse(p.b), y)? else {
                return Ok(None);
            };
            let e = family.iter().map(|u| crate::objectives::eval_eu(u, &law)).collect::<Result<Vec<f64>>>()?;
            Ok(Some((*p, e)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (pairs, points): (Vec<ThresholdPair>, Vec<Vec<f64>>) = evaluated.into_iter().flatten().unzip();
    if pairs.is_empty() {
        return Err(Error::Config("threshold grid has no legal pair".into()));
    }
    let csc_of = |e: &[f64]| (0..family.len()).map(|k| family[k].inverse(e[k])).fold(f64::INFINITY, f64::min);
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize, 1.0);
    for (i, e) in points.iter().enumerate() {
        let v = csc_of(e);
        if v > best.0 {
            best = (v, i, i, 1.0);
        }
    }
    let edges: Vec<(usize, usize)> = if family.len() == 2 {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&p, &q| points[p][0].total_cmp(&points[q][0]).then(points[p][1].total_cmp(&points[q][1])));
        let pts: Vec<(f64, f64)> = idx.iter().map(|&k| (points[k][0], points[k][1])).collect();
        let hull = upper_hull(&pts);
        let hull_idx: Vec<usize> =
            hull.iter().map(|h| idx[pts.iter().position(|p| p == h).expect("hull point")]).collect();
        let top = (0..hull.len()).fold(0, |m, k| if hull[k].1 > hull[m].1 { k } else { m });
        (top..hull.len().saturating_sub(1)).map(|k| (hull_idx[k], hull_idx[k + 1])).collect()
    } else {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&p, &q| csc_of(&points[q]).total_cmp(&csc_of(&points[p])).then(p.cmp(&q)));
        let mut cand: Vec<usize> = order.into_iter().take(opts.csc_candidates).collect();
        for k in 0..family.len() {
            let arg = (0..points.len()).fold(0, |m, i| if points[i][k] > points[m][k] { i } else { m });
            if !cand.contains(&arg) {
                cand.push(arg);
            }
        }
        let mut e = Vec::new();
        for (s, &p) in cand.iter().enumerate() {
            for &q in &cand[s + 1..] {
                e.push((p, q));
            }
        }
        e
    };
    for (p, q) in edges {
        let (theta, v, _) = mixture_optimum(family, &points[p], &points[q]);
        if v > best.0 {
            best = (v, p, q, theta);
        }
    }
    let (value, p, q, theta) = best;
    let rule = if p == q || theta >= 1.0 {
        RandomizedRule::pure(pairs[p], case)
    } else if theta <= 0.0 {
        RandomizedRule::pure(pairs[q], case)
    } else {
        RandomizedRule::from_pairs(grid.x, case, vec![(pairs[p], theta), (pairs[q], 1.0 - theta)])?
    };
    Ok((value, rule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::{build_scale, DiffusionSpec};

    #[test]
    fn grid_contains_stop_now_and_sentinels() {
        let g = ThresholdGrid::new(2.0, CaseTag::BoundedBelow { lower: 0.0 }, 5, 5).unwrap();
        assert_eq!(g.a_values.first(), Some(&0.0));
        assert_eq!(g.a_values.last(), Some(&2.0));
        assert_eq!(g.b_values.first(), Some(&2.0));
        assert_eq!(g.b_values.last(), Some(&f64::INFINITY));
        let w = ThresholdGrid::new(0.0, CaseTag::WholeLine, 4, 4).unwrap();
        assert_eq!(w.a_values.last(), Some(&f64::NEG_INFINITY));
        assert!(w.pair(3, 3).is_none());
    }

    #[test]
    fn nested_grids() {
        let case = CaseTag::Bounded { lower: 0.0, upper: 5.0 };
        let small = ThresholdGrid::new(2.5, case, 5, 5).unwrap();
        let big = ThresholdGrid::new(2.5, case, 9, 9).unwrap();
        for v in &small.b_values {
            assert!(big.b_values.iter().any(|w| (w - v).abs() < 1e-15));
        }
    }

    #[test]
    fn convex_utility_prefers_spread() {
        let scale = build_scale(&DiffusionSpec::brownian((0.0, 4.0), 1.0)).unwrap();
        let grid = ThresholdGrid::new(1.0, scale.case(), 9, 9).unwrap();
        let obj = Objective::Eu { utility: UtilityFn::power(2.0) };
        let r = optimize_pure_thresholds(&obj, &grid, &scale).unwrap();
        assert_eq!(r.best, BestRule::Pure { pair: ThresholdPair::new(0.0, 4.0, 1.0) });
        assert!((r.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rdu_identity_weighting_stops_now() {
        let sol = optimize_rdu_quantile(&UtilityFn::Sqrt, &WeightingFn::Identity, 1.5, 64).unwrap();
        assert!((sol.lambda - 0.5 / 1.5f64.sqrt()).abs() < 1e-14);
        assert!((sol.report.value - 1.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csc_with_one_utility_picks_better_law() {
        let u = UtilityFn::Sqrt;
        let l1 = Distribution::dirac(2.0).unwrap();
        let l2 = Distribution::dirac(1.0).unwrap();
        let s = optimize_csc_mixture(&u, &u, &l1, &l2).unwrap();
        assert_eq!(s.theta, 1.0);
        let s = optimize_csc_mixture(&u, &u, &l2, &l1).unwrap();
        assert_eq!(s.theta, 0.0);
    }
}
