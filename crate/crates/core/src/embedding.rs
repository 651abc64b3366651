//! Randomized threshold rules and the Hall-type embedding of attainable laws.
//!
//! Everything here lives in natural scale: the process `X` is a local
//! martingale started at `x` whose state space is described by a [`CaseTag`].

use std::ops::Bound;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ext_real;
use crate::measures::{Distribution, DistributionJson, Measure, Piece};
use crate::scale::CaseTag;

/// Largest number of explicit pairs produced when expanding a product band.
pub const EXPAND_LIMIT: usize = 10_000;

fn x_tol(x: f64) -> f64 {
    1e-9 * x.abs().max(1.0)
}

/// Exit from `(a, b)`, or hitting of the level `a` when `a == b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    #[serde(with = "ext_real")]
    pub a: f64,
    #[serde(with = "ext_real")]
    pub b: f64,
    pub x: f64,
}

impl ThresholdPair {
    pub fn new(a: f64, b: f64, x: f64) -> Self {
        ThresholdPair { a, b, x }
    }

    pub fn stop_now(x: f64) -> Self {
        ThresholdPair { a: x, b: x, x }
    }

    pub fn is_level(&self) -> bool {
        self.a == self.b
    }

    pub fn is_stop_now(&self) -> bool {
        self.a == self.x || self.b == self.x
    }

    /// Stop-now pairs are rewritten as `(x, x)`.
    pub fn canonical(self) -> Self {
        if self.is_stop_now() {
            Self::stop_now(self.x)
        } else {
            self
        }
    }

    pub fn validate(&self, case: &CaseTag) -> Result<()> {
        let (a, b, x) = (self.a, self.b, self.x);
        if a.is_nan() || b.is_nan() {
            return Err(Error::InvalidRule("threshold is NaN".into()));
        }
        let (lo, hi) = (case.lower(), case.upper());
        if a < lo || b > hi || a > hi || b < lo {
            return Err(Error::InvalidRule(format!("pair ({a}, {b}) leaves the state space [{lo}, {hi}]")));
        }
        if a == b {
            if !a.is_finite() {
                return Err(Error::InvalidRule("level pair must be finite".into()));
            }
            return Ok(());
        }
        if !(a <= x && x <= b) {
            return Err(Error::InvalidRule(format!("pair ({a}, {b}) does not bracket x = {x}")));
        }
        if a == f64::NEG_INFINITY && b == f64::INFINITY {
            return Err(Error::InvalidRule("the pair (-inf, +inf) never stops".into()));
        }
        Ok(())
    }

    /// Law of `X` at the exit time of this pair.
    pub fn law(&self, case: &CaseTag) -> Result<Distribution> {
        threshold_law(self, case)
    }
}

/// Law of the natural-scale process when it exits `(a, b)`.
pub fn threshold_law(pair: &ThresholdPair, case: &CaseTag) -> Result<Distribution> {
    pair.validate(case)?;
    let (a, b, x) = (pair.a, pair.b, pair.x);
    if a == b {
        return Distribution::dirac(a);
    }
    if pair.is_stop_now() {
        return Distribution::dirac(x);
    }
    if b == f64::INFINITY {
        return Distribution::dirac(a);
    }
    if a == f64::NEG_INFINITY {
        return Distribution::dirac(b);
    }
    Distribution::chi(a, b, x)
}

/// Checks that `nu` can be embedded in `X` started at `x`.
pub fn attainable(nu: &Distribution, x: f64, case: &CaseTag) -> Result<()> {
    let (a, b) = nu.support().expect("distributions are non-empty");
    let (lo, hi) = (case.lower(), case.upper());
    if a < lo || b > hi {
        return Err(Error::Unattainable(format!("support outside state space: [{a}, {b}] vs [{lo}, {hi}]")));
    }
    let mean = nu.mean();
    let tol = x_tol(x);
    match case {
        CaseTag::WholeLine => Ok(()),
        CaseTag::BoundedBelow { .. } if mean > x + tol => {
            Err(Error::Unattainable(format!("barycenter exceeds start: {mean} > {x}")))
        }
        CaseTag::BoundedAbove { .. } if mean < x - tol => {
            Err(Error::Unattainable(format!("barycenter below start: {mean} < {x}")))
        }
        CaseTag::Bounded { .. } if (mean - x).abs() > tol => {
            Err(Error::Unattainable(format!("barycenter differs from start: {mean} != {x}")))
        }
        _ => Ok(()),
    }
}

/// Which family of one-sided pairs a [`OneSided`] measure describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Pairs `(a, +∞)`: stop the first time `a` is hit.
    Below,
    /// Pairs `(-∞, b)`.
    Above,
    /// Pairs `(a, a)`.
    Level,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneSided {
    pub side: Side,
    /// Law of the single finite threshold, as a sub-probability measure.
    pub measure: Measure,
}

/// The product part `L(da) U(db) (b - a) / c` of a randomized rule, kept in
/// factored form.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub lower: Measure,
    pub upper: Measure,
    pub c: f64,
}

impl Band {
    fn c_lower(&self, x: f64) -> f64 {
        x * self.lower.total_mass() - self.lower.first_moment()
    }

    fn c_upper(&self, x: f64) -> f64 {
        self.upper.first_moment() - x * self.upper.total_mass()
    }

    /// Total probability carried by the band.
    pub fn mass(&self, x: f64) -> f64 {
        (self.lower.total_mass() * self.c_upper(x) + self.upper.total_mass() * self.c_lower(x)) / self.c
    }

    /// Explicit pairs, one per (lower atom, upper atom).
    fn expand(&self, x: f64) -> Result<Vec<(ThresholdPair, f64)>> {
        if !self.lower.is_atomic() || !self.upper.is_atomic() {
            return Err(Error::InvalidRule("band factors are not atomic".into()));
        }
        let mut out = Vec::new();
        for (a, l) in self.lower.atoms() {
            for (b, u) in self.upper.atoms() {
                out.push((ThresholdPair::new(a, b, x), l * u * (b - a) / self.c));
            }
        }
        Ok(out)
    }
}

/// Probability measure on threshold pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RuleJson", try_from = "RuleJson")]
pub struct RandomizedRule {
    pub x: f64,
    pub case: CaseTag,
    pub atoms: Vec<(ThresholdPair, f64)>,
    pub one_sided: Option<OneSided>,
    pub band: Option<Band>,
}

impl RandomizedRule {
    pub fn pure(pair: ThresholdPair, case: CaseTag) -> Self {
        RandomizedRule { x: pair.x, case, atoms: vec![(pair.canonical(), 1.0)], one_sided: None, band: None }
    }

    pub fn stop_now(x: f64, case: CaseTag) -> Self {
        Self::pure(ThresholdPair::stop_now(x), case)
    }

    /// Rule with finitely many pairs; duplicates are merged.
    pub fn from_pairs(x: f64, case: CaseTag, pairs: Vec<(ThresholdPair, f64)>) -> Result<Self> {
        let rule = RandomizedRule { x, case, atoms: merge_pairs(pairs), one_sided: None, band: None };
        rule.validate()?;
        Ok(rule)
    }

    pub fn total_mass(&self) -> f64 {
        let mut m: f64 = self.atoms.iter().map(|p| p.1).sum();
        if let Some(o) = &self.one_sided {
            m += o.measure.total_mass();
        }
        if let Some(b) = &self.band {
            m += b.mass(self.x);
        }
        m
    }

    /// True when the rule is a finite list of pairs.
    pub fn is_atomic(&self) -> bool {
        self.band.is_none() && self.one_sided.as_ref().is_none_or(|o| o.measure.is_empty())
    }

    pub fn validate(&self) -> Result<()> {
        let x = self.x;
        for (p, m) in &self.atoms {
            if p.x != x {
                return Err(Error::InvalidRule("pair has a different reference point".into()));
            }
            p.validate(&self.case)?;
            if !(*m >= 0.0) {
                return Err(Error::InvalidRule(format!("negative mass {m}")));
            }
        }
        if let Some(o) = &self.one_sided {
            if let Some((lo, hi)) = o.measure.support() {
                let ok = match o.side {
                    Side::Below => hi <= x && matches!(self.case, CaseTag::BoundedBelow { .. } | CaseTag::WholeLine),
                    Side::Above => lo >= x && matches!(self.case, CaseTag::BoundedAbove { .. } | CaseTag::WholeLine),
                    Side::Level => true,
                };
                if !ok || lo < self.case.lower() || hi > self.case.upper() {
                    return Err(Error::InvalidRule(
                        "one-sided thresholds are on the wrong side or out of range".into(),
                    ));
                }
            }
        }
        if let Some(b) = &self.band {
            if !(b.c > 0.0) {
                return Err(Error::InvalidRule("band normalizer must be positive".into()));
            }
            let lo_ok = b.lower.support().is_none_or(|(l, h)| h <= x && l >= self.case.lower());
            let hi_ok = b.upper.support().is_none_or(|(l, h)| l >= x && h <= self.case.upper());
            if !lo_ok || !hi_ok {
                return Err(Error::InvalidRule("band factors must lie on either side of x".into()));
            }
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRule(format!("total mass {total} is not 1")));
        }
        Ok(())
    }

    /// Finite list of pairs; fails for rules with continuous parts.
    pub fn pairs(&self) -> Result<Vec<(ThresholdPair, f64)>> {
        let mut out = self.atoms.clone();
        if let Some(o) = &self.one_sided {
            if !o.measure.is_atomic() {
                return Err(Error::InvalidRule("one-sided part is not atomic".into()));
            }
            out.extend(o.measure.atoms().map(|(t, m)| (one_sided_pair(o.side, t, self.x), m)));
        }
        if let Some(b) = &self.band {
            out.extend(b.expand(self.x)?);
        }
        Ok(merge_pairs(out))
    }

    /// Law of `X` at the randomized exit time.
    pub fn pushforward(&self) -> Result<Distribution> {
        rule_pushforward(self)
    }

    pub fn sampler(&self) -> Result<RuleSampler<'_>> {
        RuleSampler::new(self)
    }

    /// Image under `z -> -z`.
    fn reflect(&self) -> RandomizedRule {
        let flip = |p: &ThresholdPair| ThresholdPair::new(-p.b, -p.a, -p.x);
        RandomizedRule {
            x: -self.x,
            case: self.case.reflect(),
            atoms: merge_pairs(self.atoms.iter().map(|(p, m)| (flip(p), *m)).collect()),
            one_sided: self.one_sided.as_ref().map(|o| OneSided {
                side: match o.side {
                    Side::Below => Side::Above,
                    Side::Above => Side::Below,
                    Side::Level => Side::Level,
                },
                measure: o.measure.reflect(),
            }),
            band: self.band.as_ref().map(|b| Band { lower: b.upper.reflect(), upper: b.lower.reflect(), c: b.c }),
        }
    }
}

fn one_sided_pair(side: Side, t: f64, x: f64) -> ThresholdPair {
    match side {
        Side::Below => ThresholdPair::new(t, f64::INFINITY, x),
        Side::Above => ThresholdPair::new(f64::NEG_INFINITY, t, x),
        Side::Level => ThresholdPair::new(t, t, x),
    }
    .canonical()
}

fn merge_pairs(mut pairs: Vec<(ThresholdPair, f64)>) -> Vec<(ThresholdPair, f64)> {
    for p in pairs.iter_mut() {
        p.0 = p.0.canonical();
    }
    pairs.retain(|p| p.1 > 0.0);
    pairs.sort_by(|p, q| p.0.a.total_cmp(&q.0.a).then(p.0.b.total_cmp(&q.0.b)));
    let mut out: Vec<(ThresholdPair, f64)> = Vec::with_capacity(pairs.len());
    for (p, m) in pairs {
        match out.last_mut() {
            Some(last) if last.0.a == p.a && last.0.b == p.b => last.1 += m,
            _ => out.push((p, m)),
        }
    }
    out
}

/// Law of `X` at the stopping time induced by the rule.
pub fn rule_pushforward(rule: &RandomizedRule) -> Result<Distribution> {
    let mut pieces: Vec<Piece> = Vec::new();
    for (p, m) in &rule.atoms {
        let law = threshold_law(p, &rule.case)?;
        pieces.extend(law.atoms().map(|(z, w)| Piece::Atom { loc: z, mass: w * m }));
    }
    if let Some(o) = &rule.one_sided {
        pieces.extend_from_slice(o.measure.pieces());
    }
    if let Some(b) = &rule.band {
        let x = rule.x;
        pieces.extend_from_slice(b.lower.scaled(b.c_upper(x) / b.c).pieces());
        pieces.extend_from_slice(b.upper.scaled(b.c_lower(x) / b.c).pieces());
    }
    Distribution::new(Measure::from_pieces(pieces)?)
}

/// Quantities computed while building the embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallDiagnostics {
    pub v_star: f64,
    pub z_star: f64,
    pub c: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    pub one_sided_mass: f64,
    pub band_mass: f64,
}

/// Randomized threshold rule whose exit law is `nu`.
pub fn hall_embed(nu: &Distribution, x: f64, case: &CaseTag) -> Result<RandomizedRule> {
    Ok(hall_embed_with_diagnostics(nu, x, case)?.0)
}

pub fn hall_embed_with_diagnostics(
    nu: &Distribution,
    x: f64,
    case: &CaseTag,
) -> Result<(RandomizedRule, HallDiagnostics)> {
    if !x.is_finite() || !(case.lower() <= x && x <= case.upper()) {
        return Err(Error::Domain(format!("start {x} is outside the state space")));
    }
    attainable(nu, x, case)?;
    match *case {
        CaseTag::WholeLine if (nu.mean() - x).abs() <= x_tol(x) => embed_bounded_below(nu, x, case, true),
        CaseTag::WholeLine => {
            let rule = RandomizedRule {
                x,
                case: *case,
                atoms: Vec::new(),
                one_sided: Some(OneSided { side: Side::Level, measure: nu.measure().clone() }),
                band: None,
            };
            let rule = expand_small(rule)?;
            let diag = HallDiagnostics {
                v_star: 1.0,
                z_star: f64::NAN,
                c: 0.0,
                c_lower: 0.0,
                c_upper: 0.0,
                one_sided_mass: 1.0,
                band_mass: 0.0,
            };
            Ok((rule, diag))
        }
        CaseTag::BoundedAbove { .. } => {
            let reflected = Distribution::new(nu.reflect())?;
            let (rule, mut diag) = embed_bounded_below(&reflected, -x, &case.reflect(), false)?;
            diag.z_star = -diag.z_star;
            Ok((rule.reflect(), diag))
        }
        CaseTag::Bounded { .. } => embed_bounded_below(nu, x, case, true),
        CaseTag::BoundedBelow { .. } => embed_bounded_below(nu, x, case, false),
    }
}

/// Smallest `v` with `∫_v^1 (G(u) - x) du = 0`, walking the pieces from the top.
fn split_level(nu: &Measure, x: f64) -> f64 {
    let pieces = nu.pieces();
    let cum = nu.cumulative();
    let n = pieces.len();
    let mut f = 0.0;
    for k in (0..n).rev() {
        let p = pieces[k];
        let m = p.mass();
        let f_lo = f + m * (p.mean() - x);
        if f_lo <= 0.0 && (f > 0.0 || k == n - 1) {
            let t = match p {
                Piece::Atom { loc, .. } => {
                    if loc < x {
                        f / (x - loc)
                    } else {
                        0.0
                    }
                }
                Piece::Slab { lo, hi, .. } => {
                    let alpha = (hi - lo) / (2.0 * m);
                    let beta = hi - x;
                    let disc = (beta * beta + 4.0 * alpha * f).sqrt();
                    if beta >= 0.0 {
                        (beta + disc) / (2.0 * alpha)
                    } else if disc - beta > 0.0 {
                        2.0 * f / (disc - beta)
                    } else {
                        0.0
                    }
                }
            };
            return (cum[k + 1] - t.min(m)).clamp(cum[k], cum[k + 1]);
        }
        f = f_lo;
    }
    0.0
}

fn embed_bounded_below(
    nu: &Distribution,
    x: f64,
    case: &CaseTag,
    two_sided: bool,
) -> Result<(RandomizedRule, HallDiagnostics)> {
    let (_, max_support) = nu.support().expect("non-empty");
    let mut v_star = if two_sided {
        0.0
    } else if max_support <= x {
        1.0
    } else {
        split_level(nu, x)
    };
    if v_star < 1e-14 {
        v_star = 0.0;
    } else if v_star > 1.0 - 1e-14 {
        v_star = 1.0;
    }
    let z_star = if v_star >= 1.0 { max_support } else { nu.position_at_mass(v_star) };
    let (nu0, nu1) = if v_star >= 1.0 {
        (nu.measure().clone(), Measure::empty())
    } else if v_star <= 0.0 {
        (Measure::empty(), nu.measure().clone())
    } else {
        nu.split_at_mass(v_star)
    };
    let lower = nu1.restrict(Bound::Unbounded, Bound::Included(x));
    let upper = nu1.restrict(Bound::Excluded(x), Bound::Unbounded);
    let c_lower = x * lower.total_mass() - lower.first_moment();
    let c_upper = upper.first_moment() - x * upper.total_mass();
    let mut atoms = Vec::new();
    let mut band = None;
    let mut c = 0.0;
    if upper.is_empty() {
        // all of nu1 must sit at x
        if c_lower > x_tol(x) * lower.total_mass().max(1e-300) {
            return Err(Error::Numeric("lower band factor has no upper counterpart".into()));
        }
        if !lower.is_empty() {
            atoms.push((ThresholdPair::stop_now(x), lower.total_mass()));
        }
    } else {
        if lower.is_empty() || !(c_lower > 0.0) {
            return Err(Error::Numeric("upper band factor has no lower counterpart".into()));
        }
        let (ml, mu) = (lower.total_mass(), upper.total_mass());
        c = (ml * c_upper + mu * c_lower) / (ml + mu);
        band = Some(Band { lower, upper, c });
    }
    let one_sided = if nu0.is_empty() { None } else { Some(OneSided { side: Side::Below, measure: nu0 }) };
    let rule = RandomizedRule { x, case: *case, atoms, one_sided, band };
    let diag = HallDiagnostics {
        v_star,
        z_star,
        c,
        c_lower,
        c_upper,
        one_sided_mass: rule.one_sided.as_ref().map_or(0.0, |o| o.measure.total_mass()),
        band_mass: rule.band.as_ref().map_or(0.0, |b| b.mass(x)),
    };
    Ok((expand_small(rule)?, diag))
}

/// Replaces atomic components by explicit pairs when that stays small.
fn expand_small(mut rule: RandomizedRule) -> Result<RandomizedRule> {
    let x = rule.x;
    if let Some(o) = &rule.one_sided {
        if o.measure.is_atomic() && o.measure.pieces().len() <= EXPAND_LIMIT {
            let o = rule.one_sided.take().expect("checked");
            rule.atoms.extend(o.measure.atoms().map(|(t, m)| (one_sided_pair(o.side, t, x), m)));
        }
    }
    if let Some(b) = &rule.band {
        let size = b.lower.pieces().len() * b.upper.pieces().len();
        if b.lower.is_atomic() && b.upper.is_atomic() && size <= EXPAND_LIMIT {
            let b = rule.band.take().expect("checked");
            rule.atoms.extend(b.expand(x)?);
        }
    }
    rule.atoms = merge_pairs(std::mem::take(&mut rule.atoms));
    Ok(rule)
}

/// Finite rule approximating `rule` with about `n` pairs.
///
/// Continuous parts are replaced by equal-mass cell barycenters, which keeps
/// the band normalizer and the pushforward mean unchanged. An atomic rule is
/// returned as is.
pub fn approximate_by_atoms(rule: &RandomizedRule, n: usize) -> Result<RandomizedRule> {
    if rule.is_atomic() {
        return Ok(rule.clone());
    }
    let n = n.max(1);
    let mut out = RandomizedRule { one_sided: None, band: None, ..rule.clone() };
    if let Some(o) = &rule.one_sided {
        let measure = if o.measure.is_atomic() { o.measure.clone() } else { o.measure.discretize_cells(n) };
        out.atoms.extend(measure.atoms().map(|(t, m)| (one_sided_pair(o.side, t, rule.x), m)));
    }
    if let Some(b) = &rule.band {
        let k = ((n as f64).sqrt().floor() as usize).max(1);
        let coarse = |m: &Measure| {
            if m.is_atomic() && m.pieces().len() <= k {
                m.clone()
            } else {
                m.discretize_cells(k)
            }
        };
        let band = Band { lower: coarse(&b.lower), upper: coarse(&b.upper), c: b.c };
        out.atoms.extend(band.expand(rule.x)?);
    }
    out.atoms = merge_pairs(out.atoms);
    Ok(out)
}

/// Draws threshold pairs from a rule.
pub fn sample_rule<R: Rng + ?Sized>(rule: &RandomizedRule, rng: &mut R) -> Result<ThresholdPair> {
    Ok(RuleSampler::new(rule)?.sample(rng))
}

/// Sampling tables for the pieces of a measure tilted by `|z - x|`.
#[derive(Clone, Debug)]
struct Tilted {
    cum: Vec<f64>,
}

impl Tilted {
    fn new(m: &Measure, x: f64) -> Self {
        let mut cum = Vec::with_capacity(m.pieces().len());
        let mut acc = 0.0;
        for p in m.pieces() {
            acc += p.mass() * (p.mean() - x).abs();
            cum.push(acc);
        }
        Tilted { cum }
    }

    fn sample<R: Rng + ?Sized>(&self, m: &Measure, x: f64, rng: &mut R) -> f64 {
        let total = *self.cum.last().expect("non-empty");
        let r = rng.random::<f64>() * total;
        let k = self.cum.partition_point(|&c| c <= r).min(self.cum.len() - 1);
        match m.pieces()[k] {
            Piece::Atom { loc, .. } => loc,
            Piece::Slab { lo, hi, .. } => {
                let (d0, d1) = ((lo - x).abs(), (hi - x).abs());
                let u: f64 = rng.random();
                let d = (d0 * d0 + u * (d1 * d1 - d0 * d0)).sqrt();
                if hi <= x {
                    (x - d).clamp(lo, hi)
                } else {
                    (x + d).clamp(lo, hi)
                }
            }
        }
    }
}

/// Precomputed sampler for a [`RandomizedRule`].
#[derive(Clone, Debug)]
pub struct RuleSampler<'a> {
    rule: &'a RandomizedRule,
    cum: Vec<f64>,
    lower_tilt: Option<Tilted>,
    upper_tilt: Option<Tilted>,
}

impl<'a> RuleSampler<'a> {
    pub fn new(rule: &'a RandomizedRule) -> Result<Self> {
        rule.validate()?;
        let x = rule.x;
        let mut cum = Vec::with_capacity(rule.atoms.len() + 3);
        let mut acc = 0.0;
        for (_, m) in &rule.atoms {
            acc += m;
            cum.push(acc);
        }
        acc += rule.one_sided.as_ref().map_or(0.0, |o| o.measure.total_mass());
        cum.push(acc);
        let (mut lower_tilt, mut upper_tilt) = (None, None);
        if let Some(b) = &rule.band {
            acc += b.lower.total_mass() * b.c_upper(x) / b.c;
            cum.push(acc);
            acc += b.upper.total_mass() * b.c_lower(x) / b.c;
            cum.push(acc);
            lower_tilt = Some(Tilted::new(&b.lower, x));
            upper_tilt = Some(Tilted::new(&b.upper, x));
        }
        Ok(RuleSampler { rule, cum, lower_tilt, upper_tilt })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ThresholdPair {
        let rule = self.rule;
        let x = rule.x;
        let total = *self.cum.last().expect("non-empty");
        let r = rng.random::<f64>() * total;
        let k = self.cum.partition_point(|&c| c <= r).min(self.cum.len() - 1);
        let n = rule.atoms.len();
        if k < n {
            return rule.atoms[k].0;
        }
        if k == n {
            if let Some(o) = &rule.one_sided {
                return one_sided_pair(o.side, o.measure.sample(rng), x);
            }
        }
        let b = rule.band.as_ref().expect("band component");
        let (lt, ut) = (self.lower_tilt.as_ref().expect("band"), self.upper_tilt.as_ref().expect("band"));
        let (a, bb) = if k == n + 1 {
            (b.lower.sample(rng), ut.sample(&b.upper, x, rng))
        } else {
            (lt.sample(&b.lower, x, rng), b.upper.sample(rng))
        };
        ThresholdPair::new(a, bb, x).canonical()
    }
}

/// Serialized form of a pair with its probability.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairMass {
    #[serde(with = "ext_real")]
    pub a: f64,
    #[serde(with = "ext_real")]
    pub b: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OneSidedJson {
    pub side: Side,
    pub measure: DistributionJson,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandJson {
    pub lower: DistributionJson,
    pub upper: DistributionJson,
    pub c: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuleJson {
    pub x: f64,
    pub case: CaseTag,
    pub atoms: Vec<PairMass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_sided: Option<OneSidedJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandJson>,
}

impl From<RandomizedRule> for RuleJson {
    fn from(r: RandomizedRule) -> Self {
        RuleJson {
            x: r.x,
            case: r.case,
            atoms: r.atoms.iter().map(|(p, m)| PairMass { a: p.a, b: p.b, mass: *m }).collect(),
            one_sided: r.one_sided.map(|o| OneSidedJson { side: o.side, measure: o.measure.to_json() }),
            band: r.band.map(|b| BandJson { lower: b.lower.to_json(), upper: b.upper.to_json(), c: b.c }),
        }
    }
}

impl TryFrom<RuleJson> for RandomizedRule {
    type Error = Error;

    fn try_from(j: RuleJson) -> Result<Self> {
        let x = j.x;
        let one_sided = match j.one_sided {
            Some(o) => Some(OneSided { side: o.side, measure: o.measure.to_measure()? }),
            None => None,
        };
        let band = match j.band {
            Some(b) => Some(Band { lower: b.lower.to_measure()?, upper: b.upper.to_measure()?, c: b.c }),
            None => None,
        };
        let rule = RandomizedRule {
            x,
            case: j.case,
            atoms: merge_pairs(j.atoms.iter().map(|p| (ThresholdPair::new(p.a, p.b, x), p.mass)).collect()),
            one_sided,
            band,
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// `a,b,mass` rows for an atomic rule.
pub fn rule_atoms_csv(rule: &RandomizedRule) -> Result<String> {
    let mut s = String::from("a,b,mass\n");
    for (p, m) in rule.pairs()? {
        s.push_str(&format!(
            "{},{},{}\n",
            crate::io::fmt_float(p.a),
            crate::io::fmt_float(p.b),
            crate::io::fmt_float(m)
        ));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn below(l: f64) -> CaseTag {
        CaseTag::BoundedBelow { lower: l }
    }

    #[test]
    fn two_atom_example() {
        let nu = Distribution::from_atoms(&[(0.0, 0.5), (3.0, 0.5)]).unwrap();
        let (rule, d) = hall_embed_with_diagnostics(&nu, 2.0, &below(0.0)).unwrap();
        assert!((d.v_star - 0.25).abs() < 1e-15);
        assert_eq!(d.z_star, 0.0);
        assert!((d.c - 0.5).abs() < 1e-15);
        assert_eq!(rule.atoms.len(), 2);
        assert_eq!((rule.atoms[0].0.a, rule.atoms[0].0.b), (0.0, 3.0));
        assert!((rule.atoms[0].1 - 0.75).abs() < 1e-15);
        assert_eq!(rule.atoms[1].0.b, f64::INFINITY);
        assert!((rule.atoms[1].1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dirac_at_start_is_stop_now() {
        for case in [below(0.0), CaseTag::Bounded { lower: -1.0, upper: 4.0 }, CaseTag::WholeLine] {
            let rule = hall_embed(&Distribution::dirac(1.0).unwrap(), 1.0, &case).unwrap();
            assert_eq!(rule.atoms, vec![(ThresholdPair::stop_now(1.0), 1.0)]);
        }
    }

    #[test]
    fn two_point_target_gives_pure_rule() {
        let nu = Distribution::chi(0.0, 3.0, 1.0).unwrap();
        for case in [below(-2.0), CaseTag::Bounded { lower: 0.0, upper: 3.0 }, CaseTag::WholeLine] {
            let rule = hall_embed(&nu, 1.0, &case).unwrap();
            assert_eq!(rule.atoms.len(), 1, "{case:?}");
            assert_eq!((rule.atoms[0].0.a, rule.atoms[0].0.b), (0.0, 3.0));
            assert!((rule.atoms[0].1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unattainable_is_reported() {
        let nu = Distribution::from_atoms(&[(1.0, 0.5), (4.0, 0.5)]).unwrap();
        let err = hall_embed(&nu, 2.0, &below(0.0)).unwrap_err();
        assert!(matches!(err, Error::Unattainable(ref r) if r.contains("barycenter exceeds start")));
    }

    #[test]
    fn continuous_target_stays_factored() {
        let nu = Distribution::from_quantile_fn(|u| 3.0 * u, 512).unwrap();
        let rule = hall_embed(&nu, 2.0, &below(0.0)).unwrap();
        assert!(rule.band.is_some());
        assert!((rule.total_mass() - 1.0).abs() < 1e-12);
        let w = crate::measures::wasserstein1(&rule.pushforward().unwrap(), &nu).unwrap();
        assert!(w < 1e-12, "{w}");
        let approx = approximate_by_atoms(&rule, 64).unwrap();
        assert!(approx.is_atomic());
        assert!((approx.pushforward().unwrap().mean() - nu.mean()).abs() < 1e-12);
    }

    #[test]
    fn bounded_above_by_reflection() {
        let nu = Distribution::from_atoms(&[(-3.0, 0.5), (0.0, 0.5)]).unwrap();
        let rule = hall_embed(&nu, -2.0, &CaseTag::BoundedAbove { upper: 0.0 }).unwrap();
        let pf = rule.pushforward().unwrap();
        let got: Vec<(f64, f64)> = pf.atoms().collect();
        assert_eq!(got.len(), 2);
        assert!((got[0].1 - 0.5).abs() < 1e-15 && (got[1].1 - 0.5).abs() < 1e-15);
        assert!(rule.atoms.iter().any(|(p, _)| p.a == f64::NEG_INFINITY && p.b == 0.0));
    }

    #[test]
    fn sampler_frequencies() {
        let nu = Distribution::from_atoms(&[(0.0, 0.5), (3.0, 0.5)]).unwrap();
        let rule = hall_embed(&nu, 2.0, &below(0.0)).unwrap();
        let s = rule.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let hits = (0..n).filter(|_| s.sample(&mut rng).b == 3.0).count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.75).abs() < 4.0 * (0.75 * 0.25 / n as f64).sqrt());
    }

    #[test]
    fn rule_json_round_trip() {
        let nu = Distribution::from_quantile_fn(|u| 3.0 * u * u, 64).unwrap();
        let rule = hall_embed(&nu, 1.2, &below(0.0)).unwrap();
        let s = serde_json::to_string(&rule).unwrap();
        let back: RandomizedRule = serde_json::from_str(&s).unwrap();
        let (p, q) = (rule.pushforward().unwrap(), back.pushforward().unwrap());
        assert!(crate::measures::wasserstein1(&p, &q).unwrap() < 1e-14);
        assert_eq!(back.band.as_ref().unwrap().c, rule.band.as_ref().unwrap().c);
    }
}
