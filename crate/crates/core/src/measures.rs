//! Finite measures on the real line: exact atoms plus piecewise-uniform
//! continuous mass.
//!
//! A continuous part stored as uniform slabs is the same thing as a
//! piecewise-linear quantile function on a (possibly non-uniform) level grid,
//! and the representation is closed under mixture, restriction and splitting.

use std::ops::{Bound, Deref};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Default number of quantile cells for continuous laws.
pub const DEFAULT_GRID_SIZE: usize = 4096;

/// Accepted deviation of a probability measure's total mass from one.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piece {
    Atom {
        loc: f64,
        mass: f64,
    },
    /// Mass spread uniformly on `[lo, hi]`, `lo < hi`.
    Slab {
        lo: f64,
        hi: f64,
        mass: f64,
    },
}

impl Piece {
    pub fn mass(&self) -> f64 {
        match *self {
            Piece::Atom { mass, .. } | Piece::Slab { mass, .. } => mass,
        }
    }

    pub fn lo(&self) -> f64 {
        match *self {
            Piece::Atom { loc, .. } => loc,
            Piece::Slab { lo, .. } => lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match *self {
            Piece::Atom { loc, .. } => loc,
            Piece::Slab { hi, .. } => hi,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Piece::Atom { loc, .. } => loc,
            Piece::Slab { lo, hi, .. } => 0.5 * (lo + hi),
        }
    }

    /// Position reached after consuming the fraction `t` of this piece's mass.
    pub fn position(&self, t: f64) -> f64 {
        match *self {
            Piece::Atom { loc, .. } => loc,
            Piece::Slab { lo, hi, .. } => (lo + t.clamp(0.0, 1.0) * (hi - lo)).min(hi),
        }
    }

    fn with_mass(&self, m: f64) -> Piece {
        match *self {
            Piece::Atom { loc, .. } => Piece::Atom { loc, mass: m },
            Piece::Slab { lo, hi, .. } => Piece::Slab { lo, hi, mass: m },
        }
    }

    fn order_key(&self) -> (f64, u8) {
        match *self {
            Piece::Atom { loc, .. } => (loc, 0),
            Piece::Slab { lo, .. } => (lo, 1),
        }
    }
}

/// A finite (sub-probability or probability) measure.
///
/// Invariants: pieces are sorted along the line, atoms have distinct
/// locations, slabs have disjoint interiors, no atom lies strictly inside a
/// slab and every piece carries positive mass.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Measure {
    pieces: Vec<Piece>,
    cum: Vec<f64>,
}

impl Measure {
    pub fn empty() -> Self {
        Measure { pieces: Vec::new(), cum: vec![0.0] }
    }

    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        Self::from_pieces(atoms.iter().map(|&(loc, mass)| Piece::Atom { loc, mass }).collect())
    }

    /// Builds a measure from arbitrary (possibly overlapping) pieces.
    pub fn from_pieces(raw: Vec<Piece>) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut slabs: Vec<(f64, f64, f64)> = Vec::new();
        for p in raw {
            let m = p.mass();
            if !m.is_finite() || m < 0.0 {
                return Err(Error::InvalidDistribution(format!("mass {m} is not a finite non-negative number")));
            }
            match p {
                Piece::Atom { loc, .. } => {
                    if !loc.is_finite() {
                        return Err(Error::InvalidDistribution(format!("atom location {loc} is not finite")));
                    }
                    if m > 0.0 {
                        atoms.push((loc, m));
                    }
                }
                Piece::Slab { lo, hi, .. } => {
                    if !lo.is_finite() || !hi.is_finite() || lo > hi {
                        return Err(Error::InvalidDistribution(format!("bad slab [{lo}, {hi}]")));
                    }
                    if m > 0.0 {
                        if lo == hi {
                            atoms.push((lo, m));
                        } else {
                            slabs.push((lo, hi, m));
                        }
                    }
                }
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (loc, m) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == loc => last.1 += m,
                _ => merged.push((loc, m)),
            }
        }
        let slabs = canonical_slabs(slabs, &merged);
        let mut pieces: Vec<Piece> = merged
            .into_iter()
            .map(|(loc, mass)| Piece::Atom { loc, mass })
            .chain(slabs.into_iter().map(|(lo, hi, mass)| Piece::Slab { lo, hi, mass }))
            .collect();
        pieces.sort_by(|a, b| {
            let (ka, kb) = (a.order_key(), b.order_key());
            ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
        });
        Ok(Self::from_sorted(pieces))
    }

    fn from_sorted(pieces: Vec<Piece>) -> Self {
        let mut cum = Vec::with_capacity(pieces.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for p in &pieces {
            acc += p.mass();
            cum.push(acc);
        }
        Measure { pieces, cum }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Cumulative masses; `cumulative()[k]` is the mass strictly before piece `k`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn total_mass(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn is_atomic(&self) -> bool {
        self.pieces.iter().all(|p| matches!(p, Piece::Atom { .. }))
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.pieces.iter().filter_map(|p| match *p {
            Piece::Atom { loc, mass } => Some((loc, mass)),
            _ => None,
        })
    }

    pub fn continuous_mass(&self) -> f64 {
        self.pieces.iter().filter(|p| matches!(p, Piece::Slab { .. })).map(Piece::mass).sum()
    }

    /// Smallest and largest points of the support.
    pub fn support(&self) -> Option<(f64, f64)> {
        Some((self.pieces.first()?.lo(), self.pieces.last()?.hi()))
    }

    pub fn first_moment(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass() * p.mean()).sum()
    }

    /// Mean of the normalized measure.
    pub fn barycenter(&self) -> Option<f64> {
        let m = self.total_mass();
        (m > 0.0).then(|| self.first_moment() / m)
    }

    /// `∫ f dμ`; slabs are integrated with a Gauss-Legendre rule.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.pieces
            .iter()
            .map(|p| match *p {
                Piece::Atom { loc, mass } => mass * f(loc),
                Piece::Slab { lo, hi, mass } => mass / (hi - lo) * numeric::gauss_legendre(&f, lo, hi),
            })
            .sum()
    }

    /// Mass of `(-∞, z]`.
    pub fn cdf(&self, z: f64) -> f64 {
        self.mass_below(z, true)
    }

    /// Mass of `(-∞, z)`.
    pub fn cdf_left(&self, z: f64) -> f64 {
        self.mass_below(z, false)
    }

    fn mass_below(&self, z: f64, inclusive: bool) -> f64 {
        let k = self.pieces.partition_point(|p| p.hi() < z || (inclusive && p.hi() == z));
        let mut acc = self.cum[k];
        if let Some(&Piece::Slab { lo, hi, mass }) = self.pieces.get(k) {
            if z > lo {
                acc += mass * (z - lo) / (hi - lo);
            }
        }
        acc
    }

    /// Right-continuous generalized inverse of the cumulative mass:
    /// position of the mass level `m ∈ [0, total)`.
    pub fn position_at_mass(&self, m: f64) -> f64 {
        let n = self.pieces.len();
        assert!(n > 0, "empty measure has no quantiles");
        let k = self.cum[1..n].partition_point(|&c| c <= m);
        let p = &self.pieces[k];
        p.position((m - self.cum[k]) / p.mass())
    }

    /// First moment of the lowest mass `m` of the measure.
    pub fn moment_below_mass(&self, m: f64) -> f64 {
        let mut acc = 0.0;
        for (k, p) in self.pieces.iter().enumerate() {
            let (c0, c1) = (self.cum[k], self.cum[k + 1]);
            if m >= c1 {
                acc += p.mass() * p.mean();
                continue;
            }
            let part = m - c0;
            if part > 0.0 {
                acc += part * 0.5 * (p.lo() + p.position(part / p.mass()));
            }
            break;
        }
        acc
    }

    pub fn scaled(&self, factor: f64) -> Measure {
        if factor <= 0.0 {
            return Measure::empty();
        }
        Self::from_sorted(self.pieces.iter().map(|p| p.with_mass(p.mass() * factor)).collect())
    }

    pub fn add(&self, other: &Measure) -> Result<Measure> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        let mut pieces = self.pieces.clone();
        pieces.extend_from_slice(&other.pieces);
        Self::from_pieces(pieces)
    }

    /// Restriction to the set of points between `lower` and `upper`.
    pub fn restrict(&self, lower: Bound<f64>, upper: Bound<f64>) -> Measure {
        let above = |z: f64| match lower {
            Bound::Included(l) => z >= l,
            Bound::Excluded(l) => z > l,
            Bound::Unbounded => true,
        };
        let below = |z: f64| match upper {
            Bound::Included(u) => z <= u,
            Bound::Excluded(u) => z < u,
            Bound::Unbounded => true,
        };
        let l = match lower {
            Bound::Included(v) | Bound::Excluded(v) => v,
            Bound::Unbounded => f64::NEG_INFINITY,
        };
        let u = match upper {
            Bound::Included(v) | Bound::Excluded(v) => v,
            Bound::Unbounded => f64::INFINITY,
        };
        let mut out = Vec::new();
        for p in &self.pieces {
            match *p {
                Piece::Atom { loc, .. } => {
                    if above(loc) && below(loc) {
                        out.push(*p);
                    }
                }
                Piece::Slab { lo, hi, mass } => {
                    let (a, b) = (lo.max(l), hi.min(u));
                    if a < b {
                        if a == lo && b == hi {
                            out.push(*p);
                        } else {
                            out.push(Piece::Slab { lo: a, hi: b, mass: mass * (b - a) / (hi - lo) });
                        }
                    }
                }
            }
        }
        Self::from_sorted(out)
    }

    /// Splits off the lowest mass `m`: returns `(lower, upper)` with
    /// `lower.total_mass() == m` (clamped to the total).
    pub fn split_at_mass(&self, m: f64) -> (Measure, Measure) {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (k, p) in self.pieces.iter().enumerate() {
            let (c0, c1) = (self.cum[k], self.cum[k + 1]);
            if c1 <= m {
                lower.push(*p);
            } else if c0 >= m {
                upper.push(*p);
            } else {
                let part = m - c0;
                let rest = p.mass() - part;
                match *p {
                    Piece::Atom { loc, .. } => {
                        lower.push(Piece::Atom { loc, mass: part });
                        upper.push(Piece::Atom { loc, mass: rest });
                    }
                    Piece::Slab { lo, hi, .. } => {
                        let cut = p.position(part / p.mass());
                        if cut > lo {
                            lower.push(Piece::Slab { lo, hi: cut, mass: part });
                        } else {
                            lower.push(Piece::Atom { loc: lo, mass: part });
                        }
                        if cut < hi {
                            upper.push(Piece::Slab { lo: cut, hi, mass: rest });
                        } else {
                            upper.push(Piece::Atom { loc: hi, mass: rest });
                        }
                    }
                }
            }
        }
        (Self::from_sorted(lower), Self::from_sorted(upper))
    }

    /// Image under a strictly increasing map. Atoms are mapped exactly;
    /// slab endpoints are mapped and mass stays uniform in between, which is
    /// linear interpolation of the image quantile function.
    pub fn map_increasing<F: Fn(f64) -> f64>(&self, f: F) -> Result<Measure> {
        let mut out = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            out.push(match *p {
                Piece::Atom { loc, mass } => Piece::Atom { loc: f(loc), mass },
                Piece::Slab { lo, hi, mass } => Piece::Slab { lo: f(lo), hi: f(hi), mass },
            });
        }
        Self::from_pieces(out)
    }

    /// Image under `z -> -z`.
    pub fn reflect(&self) -> Measure {
        Self::from_sorted(
            self.pieces
                .iter()
                .rev()
                .map(|p| match *p {
                    Piece::Atom { loc, mass } => Piece::Atom { loc: -loc, mass },
                    Piece::Slab { lo, hi, mass } => Piece::Slab { lo: -hi, hi: -lo, mass },
                })
                .collect(),
        )
    }

    /// Replaces the measure by `k` equal-mass atoms sitting at the
    /// barycenters of consecutive mass cells. The first moment is preserved.
    pub fn discretize_cells(&self, k: usize) -> Measure {
        let total = self.total_mass();
        if self.is_empty() || k == 0 {
            return Measure::empty();
        }
        let (lo, hi) = self.support().expect("non-empty");
        let mut atoms = Vec::with_capacity(k);
        let mut prev = 0.0;
        for j in 1..=k {
            let m = if j == k { total } else { total * j as f64 / k as f64 };
            let mass = m - if j == 1 { 0.0 } else { total * (j - 1) as f64 / k as f64 };
            let mo = self.moment_below_mass(m);
            let loc = ((mo - prev) / mass).clamp(lo, hi);
            atoms.push(Piece::Atom { loc, mass });
            prev = mo;
        }
        Self::from_pieces(atoms).expect("cell barycenters are finite")
    }

    /// Draws a point from the normalized measure.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.position_at_mass(u * self.total_mass())
    }

    pub fn to_json(&self) -> DistributionJson {
        DistributionJson::from_measure(self)
    }
}

/// Splits overlapping slabs into disjoint ones and cuts slabs at atoms.
fn canonical_slabs(mut slabs: Vec<(f64, f64, f64)>, atoms: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    if slabs.is_empty() {
        return slabs;
    }
    slabs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let disjoint = slabs.windows(2).all(|w| w[0].1 <= w[1].0);
    let atom_inside = |lo: f64, hi: f64| {
        let i = atoms.partition_point(|a| a.0 <= lo);
        i < atoms.len() && atoms[i].0 < hi
    };
    if disjoint && !slabs.iter().any(|s| atom_inside(s.0, s.1)) {
        return slabs;
    }
    let mut cuts: Vec<f64> = slabs.iter().flat_map(|s| [s.0, s.1]).collect();
    cuts.extend(atoms.iter().map(|a| a.0));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    let mut next = 0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        while next < slabs.len() && slabs[next].0 <= a {
            active.push(next);
            next += 1;
        }
        active.retain(|&i| slabs[i].1 > a);
        let mut mass = 0.0;
        for &i in &active {
            let (lo, hi, m) = slabs[i];
            if hi >= b {
                mass += if lo == a && hi == b { m } else { m * (b - a) / (hi - lo) };
            }
        }
        if mass > 0.0 {
            out.push((a, b, mass));
        }
    }
    out
}

/// A probability measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "DistributionJson", try_from = "DistributionJson")]
pub struct Distribution(Measure);

impl From<Distribution> for DistributionJson {
    fn from(d: Distribution) -> Self {
        DistributionJson::from_measure(&d)
    }
}

impl TryFrom<DistributionJson> for Distribution {
    type Error = Error;
    fn try_from(j: DistributionJson) -> Result<Self> {
        Distribution::from_json(&j)
    }
}

impl Deref for Distribution {
    type Target = Measure;
    fn deref(&self) -> &Measure {
        &self.0
    }
}

impl Distribution {
    /// Wraps a measure whose total mass is one within [`MASS_TOL`];
    /// small deviations beyond `1e-12` are renormalized away.
    pub fn new(m: Measure) -> Result<Self> {
        let total = m.total_mass();
        if !((total - 1.0).abs() <= MASS_TOL) {
            return Err(Error::InvalidDistribution(format!("total mass {total} is not 1")));
        }
        if (total - 1.0).abs() > 1e-12 {
            return Ok(Distribution(m.scaled(1.0 / total)));
        }
        Ok(Distribution(m))
    }

    pub fn dirac(z: f64) -> Result<Self> {
        Self::new(Measure::from_atoms(&[(z, 1.0)])?)
    }

    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        Self::new(Measure::from_atoms(atoms)?)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(Measure::from_pieces(vec![Piece::Slab { lo, hi, mass: 1.0 }])?)
    }

    /// Two-point law on `{a, b}` with barycenter `x`.
    pub fn chi(a: f64, b: f64, x: f64) -> Result<Self> {
        if !(a <= x && x <= b) || a == b {
            return Err(Error::Domain(format!("need a <= x <= b with a < b, got ({a}, {x}, {b})")));
        }
        Self::from_atoms(&[(a, (b - x) / (b - a)), (b, (x - a) / (b - a))])
    }

    /// Continuous law whose quantile function is the linear interpolation of
    /// `g` on the levels `j/n`, `j = 0..=n`.
    pub fn from_quantile_fn<F: Fn(f64) -> f64>(g: F, n: usize) -> Result<Self> {
        let values: Vec<f64> = (0..=n).map(|j| g(j as f64 / n as f64)).collect();
        Self::new(measure_from_grid(&values, None, 1.0)?)
    }

    /// Atomic law with `n` equal-mass atoms at the exact cell means
    /// `n ∫_{cell} G`. The quantile function receives `(u, 1 - u)` so that
    /// endpoint singularities can be integrated accurately.
    pub fn from_quantile_cells<F: Fn(f64, f64) -> f64>(g: F, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("need at least one cell".into()));
        }
        let mass = 1.0 / n as f64;
        let mut atoms = Vec::with_capacity(n);
        for i in 0..n {
            let (u0, u1) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            let mean = numeric::integrate_cell(&g, u0, u1) / (u1 - u0);
            if !mean.is_finite() {
                return Err(Error::Numeric(format!("quantile cell [{u0}, {u1}] has no finite mean")));
            }
            atoms.push((mean, mass));
        }
        Self::from_atoms(&atoms)
    }

    /// Empirical law of a sample.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidDistribution("empty sample".into()));
        }
        let w = 1.0 / samples.len() as f64;
        let atoms: Vec<(f64, f64)> = samples.iter().map(|&z| (z, w)).collect();
        Self::from_atoms(&atoms)
    }

    pub fn mixture(parts: &[(f64, &Distribution)]) -> Result<Self> {
        let mut pieces = Vec::new();
        for &(w, d) in parts {
            if !(w >= 0.0) {
                return Err(Error::Domain(format!("negative mixture weight {w}")));
            }
            pieces.extend(d.pieces().iter().map(|p| p.with_mass(p.mass() * w)));
        }
        Self::new(Measure::from_pieces(pieces)?)
    }

    pub fn measure(&self) -> &Measure {
        &self.0
    }

    pub fn into_measure(self) -> Measure {
        self.0
    }

    pub fn mean(&self) -> f64 {
        self.first_moment() / self.total_mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let mut v = 0.0;
        for p in self.pieces() {
            v += match *p {
                Piece::Atom { loc, mass } => mass * (loc - m).powi(2),
                Piece::Slab { lo, hi, mass } => mass * ((0.5 * (lo + hi) - m).powi(2) + (hi - lo).powi(2) / 12.0),
            };
        }
        v
    }

    /// Right-continuous quantile function on `(0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} is outside (0, 1)")));
        }
        Ok(self.position_at_mass(u * self.total_mass()))
    }

    /// Image under a strictly increasing map.
    pub fn map_increasing<F: Fn(f64) -> f64>(&self, f: F) -> Result<Distribution> {
        Ok(Distribution(self.0.map_increasing(f)?))
    }

    pub fn from_json(j: &DistributionJson) -> Result<Self> {
        Self::new(j.to_measure()?)
    }

    /// Quantile function tabulated at the midpoints of `n` cells, as CSV.
    pub fn quantile_csv(&self, n: usize) -> String {
        let mut s = String::from("u,quantile\n");
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            let q = self.position_at_mass(u * self.total_mass());
            s.push_str(&format!("{},{}\n", crate::io::round_sig(u), crate::io::round_sig(q)));
        }
        s
    }
}

/// Exact 1-Wasserstein distance between two measures of equal total mass,
/// computed as the L1 distance between their piecewise-linear quantile functions.
pub fn wasserstein1(p: &Measure, q: &Measure) -> Result<f64> {
    let (mp, mq) = (p.total_mass(), q.total_mass());
    if p.is_empty() || q.is_empty() {
        return Err(Error::Domain("Wasserstein distance of an empty measure".into()));
    }
    if (mp - mq).abs() > MASS_TOL * mp.max(mq) {
        return Err(Error::Domain(format!("total masses differ: {mp} vs {mq}")));
    }
    let total = mp.max(mq);
    let (cp, cq) = (p.cumulative(), q.cumulative());
    let (np, nq) = (p.pieces().len(), q.pieces().len());
    let eval = |m: &Measure, c: &[f64], k: usize, u: f64| {
        let piece = &m.pieces()[k];
        piece.position((u - c[k]) / piece.mass())
    };
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut acc = 0.0;
    while u < total {
        let end_p = if i + 1 == np { total } else { cp[i + 1] };
        let end_q = if j + 1 == nq { total } else { cq[j + 1] };
        let end = end_p.min(end_q);
        if end > u {
            let d0 = eval(p, cp, i, u) - eval(q, cq, j, u);
            let d1 = eval(p, cp, i, end) - eval(q, cq, j, end);
            let du = end - u;
            acc += if d0 * d1 >= 0.0 {
                0.5 * (d0.abs() + d1.abs()) * du
            } else {
                0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs()) * du
            };
        }
        u = end;
        if end_p <= end && i + 1 < np {
            i += 1;
        }
        if end_q <= end && j + 1 < nq {
            j += 1;
        }
        if end_p >= total && end_q >= total {
            break;
        }
    }
    Ok(acc)
}

/// Serialized form of a measure: exact atoms plus a quantile grid for the
/// continuous part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionJson {
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default)]
    pub quantile_grid: Vec<f64>,
    #[serde(default)]
    pub continuous_weight: f64,
    /// Levels of `quantile_grid` within the continuous part; omitted when
    /// the grid is uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile_levels: Option<Vec<f64>>,
}

impl DistributionJson {
    pub fn from_measure(m: &Measure) -> Self {
        let atoms: Vec<(f64, f64)> = m.atoms().collect();
        let slabs: Vec<(f64, f64, f64)> = m
            .pieces()
            .iter()
            .filter_map(|p| match *p {
                Piece::Slab { lo, hi, mass } => Some((lo, hi, mass)),
                _ => None,
            })
            .collect();
        let w: f64 = slabs.iter().map(|s| s.2).sum();
        if slabs.is_empty() {
            return DistributionJson {
                atoms,
                quantile_grid: Vec::new(),
                continuous_weight: 0.0,
                quantile_levels: None,
            };
        }
        let mut values = vec![slabs[0].0];
        let mut levels = vec![0.0];
        let mut acc = 0.0;
        let mut uniform = true;
        for (k, &(lo, hi, mass)) in slabs.iter().enumerate() {
            if k > 0 && slabs[k - 1].1 != lo {
                uniform = false;
                values.push(lo);
                levels.push(acc / w);
            }
            if numeric::rel_diff(mass, slabs[0].2, 0.0) > 1e-12 {
                uniform = false;
            }
            acc += mass;
            values.push(hi);
            levels.push(if k + 1 == slabs.len() { 1.0 } else { acc / w });
        }
        DistributionJson {
            atoms,
            quantile_grid: values,
            continuous_weight: w,
            quantile_levels: (!uniform).then_some(levels),
        }
    }

    pub fn to_measure(&self) -> Result<Measure> {
        let mut pieces: Vec<Piece> = self.atoms.iter().map(|&(loc, mass)| Piece::Atom { loc, mass }).collect();
        if self.continuous_weight > 0.0 {
            let grid = measure_from_grid(&self.quantile_grid, self.quantile_levels.as_deref(), self.continuous_weight)?;
            pieces.extend_from_slice(grid.pieces());
        }
        Measure::from_pieces(pieces)
    }
}

fn measure_from_grid(values: &[f64], levels: Option<&[f64]>, weight: f64) -> Result<Measure> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidDistribution("quantile grid needs at least two values".into()));
    }
    let default_levels: Vec<f64>;
    let levels = match levels {
        Some(l) => {
            if l.len() != n {
                return Err(Error::InvalidDistribution("quantile_levels and quantile_grid differ in length".into()));
            }
            l
        }
        None => {
            default_levels = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
            &default_levels
        }
    };
    let mut pieces = Vec::with_capacity(n);
    for j in 0..n - 1 {
        let (v0, v1, l0, l1) = (values[j], values[j + 1], levels[j], levels[j + 1]);
        if !v0.is_finite() || !v1.is_finite() {
            return Err(Error::InvalidDistribution("quantile grid values must be finite".into()));
        }
        if v1 < v0 || l1 < l0 {
            return Err(Error::InvalidDistribution("quantile grid must be non-decreasing".into()));
        }
        let mass = weight * (l1 - l0);
        if mass > 0.0 {
            pieces.push(if v1 > v0 { Piece::Slab { lo: v0, hi: v1, mass } } else { Piece::Atom { loc: v0, mass } });
        }
    }
    Measure::from_pieces(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_on_grid_has_exact_median() {
        let d = Distribution::from_quantile_fn(|u| u, DEFAULT_GRID_SIZE).unwrap();
        assert!((d.quantile(0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((d.mean() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_is_right_continuous_at_atoms() {
        let d = Distribution::from_atoms(&[(0.0, 0.5), (3.0, 0.5)]).unwrap();
        assert_eq!(d.quantile(0.5).unwrap(), 3.0);
        assert_eq!(d.quantile(0.4999).unwrap(), 0.0);
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
    }

    #[test]
    fn overlapping_slabs_are_split() {
        let m = Measure::from_pieces(vec![
            Piece::Slab { lo: 0.0, hi: 2.0, mass: 0.5 },
            Piece::Slab { lo: 1.0, hi: 3.0, mass: 0.5 },
            Piece::Atom { loc: 0.5, mass: 0.0 },
            Piece::Atom { loc: 1.5, mass: 0.25 },
        ])
        .unwrap();
        assert!((m.total_mass() - 1.25).abs() < 1e-15);
        assert!((m.cdf(1.0) - 0.25).abs() < 1e-15);
        assert!((m.cdf(1.5) - 0.75).abs() < 1e-15);
        assert!((m.cdf_left(1.5) - 0.5).abs() < 1e-15);
        for w in m.pieces().windows(2) {
            assert!(w[0].hi() <= w[1].lo());
        }
    }

    #[test]
    fn split_and_restrict_preserve_mass() {
        let d = Distribution::mixture(&[
            (0.3, &Distribution::uniform(-1.0, 2.0).unwrap()),
            (0.7, &Distribution::from_atoms(&[(0.0, 0.5), (1.0, 0.5)]).unwrap()),
        ])
        .unwrap();
        let (lo, hi) = d.split_at_mass(0.4);
        assert!((lo.total_mass() - 0.4).abs() < 1e-15);
        assert!((lo.total_mass() + hi.total_mass() - 1.0).abs() < 1e-15);
        assert!((lo.first_moment() + hi.first_moment() - d.first_moment()).abs() < 1e-14);
        let left = d.restrict(Bound::Unbounded, Bound::Included(0.0));
        let right = d.restrict(Bound::Excluded(0.0), Bound::Unbounded);
        assert!((left.total_mass() + right.total_mass() - 1.0).abs() < 1e-15);
        assert!((left.total_mass() - (0.35 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_of_shift_is_shift() {
        let a = Distribution::uniform(0.0, 1.0).unwrap();
        let b = Distribution::uniform(0.25, 1.25).unwrap();
        assert!((wasserstein1(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let c = Distribution::from_atoms(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!((wasserstein1(&a, &c).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(wasserstein1(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn discretization_keeps_mean() {
        let d = Distribution::uniform(0.0, 3.0).unwrap();
        let cells = d.discretize_cells(3);
        let locs: Vec<f64> = cells.atoms().map(|a| a.0).collect();
        assert_eq!(locs.len(), 3);
        for (l, e) in locs.iter().zip([0.5, 1.5, 2.5]) {
            assert!((l - e).abs() < 1e-14);
        }
    }

    #[test]
    fn json_round_trip() {
        let d = Distribution::mixture(&[
            (0.5, &Distribution::uniform(0.0, 1.0).unwrap()),
            (0.25, &Distribution::uniform(2.0, 4.0).unwrap()),
            (0.25, &Distribution::dirac(1.5).unwrap()),
        ])
        .unwrap();
        let j = d.to_json();
        assert!(j.quantile_levels.is_some());
        let back = Distribution::from_json(&j).unwrap();
        assert!(wasserstein1(&d, &back).unwrap() < 1e-15);
        let u = Distribution::uniform(0.0, 1.0).unwrap().to_json();
        assert!(u.quantile_levels.is_none());
    }
}
