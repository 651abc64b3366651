//! Scale functions of one-dimensional diffusions `dY = ξ(Y)dt + σ(Y)dW`.
//!
//! The scale function is normalized so that `s(y) = y` and `s'(y) = 1` at the
//! starting point, which makes `X = s(Y)` a local martingale started at `x = y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ext_real_pair;
use crate::measures::Distribution;
use crate::numeric;

/// A coefficient function of the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Coefficient {
    Constant {
        value: f64,
    },
    /// `slope * y + intercept`.
    Linear {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    /// Piecewise-linear interpolation of `(y, value)` points, flat outside.
    ExprTable {
        points: Vec<(f64, f64)>,
    },
}

impl Coefficient {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Linear { slope, intercept } => slope * y + intercept,
            Coefficient::ExprTable { points } => {
                let n = points.len();
                if n == 0 {
                    return f64::NAN;
                }
                if y <= points[0].0 {
                    return points[0].1;
                }
                if y >= points[n - 1].0 {
                    return points[n - 1].1;
                }
                let k = points.partition_point(|p| p.0 <= y);
                let (a, b) = (points[k - 1], points[k]);
                a.1 + (b.1 - a.1) * (y - a.0) / (b.0 - a.0)
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Coefficient::Constant { value } => *value == 0.0,
            Coefficient::Linear { slope, intercept } => *slope == 0.0 && *intercept == 0.0,
            Coefficient::ExprTable { points } => points.iter().all(|p| p.1 == 0.0),
        }
    }

    fn knots(&self) -> Vec<f64> {
        match self {
            Coefficient::ExprTable { points } => points.iter().map(|p| p.0).collect(),
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Coefficient::ExprTable { points } = self {
            if points.is_empty() || points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                return Err(Error::Config("expr-table points must be non-empty with increasing abscissae".into()));
            }
        }
        Ok(())
    }
}

/// Diffusion description: coefficients, state interval and starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub drift: Coefficient,
    pub vol: Coefficient,
    #[serde(with = "ext_real_pair")]
    pub interval: (f64, f64),
    pub start: f64,
}

impl DiffusionSpec {
    pub fn brownian(interval: (f64, f64), start: f64) -> Self {
        Self::constant(0.0, 1.0, interval, start)
    }

    pub fn constant(drift: f64, vol: f64, interval: (f64, f64), start: f64) -> Self {
        DiffusionSpec {
            drift: Coefficient::Constant { value: drift },
            vol: Coefficient::Constant { value: vol },
            interval,
            start,
        }
    }

    pub fn gbm(mu: f64, sigma: f64, start: f64) -> Self {
        DiffusionSpec {
            drift: Coefficient::Linear { slope: mu, intercept: 0.0 },
            vol: Coefficient::Linear { slope: sigma, intercept: 0.0 },
            interval: (0.0, f64::INFINITY),
            start,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.interval;
        let y = self.start;
        if lo.is_nan() || hi.is_nan() || !(lo < hi) {
            return Err(Error::Config(format!("invalid interval [{lo}, {hi}]")));
        }
        if !(y.is_finite() && lo < y && y < hi) {
            return Err(Error::Config(format!("start {y} must lie strictly inside ({lo}, {hi})")));
        }
        self.drift.validate()?;
        self.vol.validate()?;
        if !(self.vol.eval(y) > 0.0) || !self.drift.eval(y).is_finite() {
            return Err(Error::Config(format!("volatility must be positive and drift finite at the start {y}")));
        }
        Ok(())
    }

    /// `2ξ/σ²`.
    fn ratio(&self, z: f64) -> f64 {
        let s = self.vol.eval(z);
        2.0 * self.drift.eval(z) / (s * s)
    }
}

/// Shape of the state space of the natural-scale process `X = s(Y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "kebab-case")]
pub enum CaseTag {
    Bounded { lower: f64, upper: f64 },
    BoundedBelow { lower: f64 },
    BoundedAbove { upper: f64 },
    WholeLine,
}

impl CaseTag {
    pub fn from_interval(lo: f64, hi: f64) -> Self {
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => CaseTag::Bounded { lower: lo, upper: hi },
            (true, false) => CaseTag::BoundedBelow { lower: lo },
            (false, true) => CaseTag::BoundedAbove { upper: hi },
            (false, false) => CaseTag::WholeLine,
        }
    }

    pub fn lower(&self) -> f64 {
        match *self {
            CaseTag::Bounded { lower, .. } | CaseTag::BoundedBelow { lower } => lower,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            CaseTag::Bounded { upper, .. } | CaseTag::BoundedAbove { upper } => upper,
            _ => f64::INFINITY,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CaseTag::Bounded { .. } => "bounded",
            CaseTag::BoundedBelow { .. } => "bounded-below",
            CaseTag::BoundedAbove { .. } => "bounded-above",
            CaseTag::WholeLine => "whole-line",
        }
    }

    /// Image under `z -> -z`.
    pub fn reflect(&self) -> CaseTag {
        CaseTag::from_interval(-self.upper(), -self.lower())
    }
}

/// Direction of a pushforward through the scale function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Y-coordinates to X-coordinates, via `s`.
    Forward,
    /// X-coordinates to Y-coordinates, via `s⁻¹`.
    Inverse,
}

#[derive(Clone, Debug)]
enum Kind {
    Identity,
    /// `s(z) = y + (1 - exp(-k(z - y)))/k` with `k = 2ξ/σ²`.
    ConstantDrift {
        k: f64,
    },
    /// `s(z) = y + y((z/y)^(1-k) - 1)/(1-k)` with `k = 2μ/c²`.
    Gbm {
        k: f64,
    },
    Numeric(Box<Table>),
}

/// Tabulated scale function: nodes with the inner integral `∫_y^z 2ξ/σ²` and `s`.
#[derive(Clone, Debug)]
struct Table {
    spec: DiffusionSpec,
    z: Vec<f64>,
    inner: Vec<f64>,
    s: Vec<f64>,
}

const SUBNODES: usize = 16;
const MAX_PIECES: usize = 200;

impl Table {
    fn ratio_integral(&self, a: f64, b: f64) -> f64 {
        numeric::gauss_legendre(|t| self.spec.ratio(t), a, b)
    }

    /// `∫_a^b exp(-(inner_a + ∫_a^t ratio))dt`.
    fn s_increment(&self, a: f64, inner_a: f64, b: f64) -> f64 {
        numeric::gauss_legendre(|t| (-(inner_a + self.ratio_integral(a, t))).exp(), a, b)
    }

    fn eval(&self, z: f64) -> f64 {
        let n = self.z.len();
        if z <= self.z[0] {
            return if z == self.z[0] { self.s[0] } else { f64::NAN };
        }
        if z >= self.z[n - 1] {
            return if z == self.z[n - 1] { self.s[n - 1] } else { f64::NAN };
        }
        let j = self.z.partition_point(|&t| t <= z) - 1;
        self.s[j] + self.s_increment(self.z[j], self.inner[j], z)
    }

    fn derivative(&self, z: f64) -> f64 {
        let j = self.z.partition_point(|&t| t <= z).saturating_sub(1).min(self.z.len() - 1);
        (-(self.inner[j] + self.ratio_integral(self.z[j], z))).exp()
    }

    fn inverse(&self, w: f64) -> f64 {
        let n = self.s.len();
        if w <= self.s[0] {
            return self.z[0];
        }
        if w >= self.s[n - 1] {
            return self.z[n - 1];
        }
        let j = self.s.partition_point(|&t| t <= w) - 1;
        let (a, b) = (self.z[j], self.z[j + 1]);
        numeric::brent(|t| self.eval(t) - w, a, b, 1e-15).unwrap_or(0.5 * (a + b))
    }
}

/// Outcome of walking toward one endpoint of the state interval.
struct Walk {
    nodes: Vec<(f64, f64, f64)>,
    /// Limit of `s` at the endpoint.
    limit: f64,
}

fn walk(spec: &DiffusionSpec, up: bool, knots: &[f64]) -> Result<Walk> {
    let y = spec.start;
    let end = if up { spec.interval.1 } else { spec.interval.0 };
    let sign = if up { 1.0 } else { -1.0 };
    let h = y.abs().max(1.0);
    let table = Table { spec: spec.clone(), z: Vec::new(), inner: Vec::new(), s: Vec::new() };
    let piece_end = |k: usize| -> f64 {
        if end.is_finite() {
            end - (end - y) * 0.5f64.powi(k as i32 + 1)
        } else {
            y + sign * h * (2f64.powi(k as i32 + 1) - 1.0)
        }
    };
    let mut nodes = Vec::new();
    let (mut z, mut inner, mut s) = (y, 0.0f64, y);
    let mut prev_delta = f64::NAN;
    let mut growing = 0usize;
    let mut prev_ratio = f64::NAN;
    let mut steady = 0usize;
    for k in 0..MAX_PIECES {
        let target = piece_end(k);
        if (target - z) * sign <= 0.0 || !target.is_finite() {
            return Ok(Walk { nodes, limit: s });
        }
        let mut cuts: Vec<f64> = (1..=SUBNODES).map(|i| z + (target - z) * i as f64 / SUBNODES as f64).collect();
        cuts.extend(knots.iter().copied().filter(|&t| (t - z) * sign > 0.0 && (target - t) * sign > 0.0));
        cuts.sort_by(|a, b| (a * sign).total_cmp(&(b * sign)));
        let start_s = s;
        for c in cuts {
            let (a, b) = if up { (z, c) } else { (c, z) };
            let di = table.ratio_integral(a, b);
            let ds = if up {
                table.s_increment(z, inner, c)
            } else {
                // integrate from c upward using the inner integral at c
                table.s_increment(c, inner - di, z)
            };
            inner += sign * di;
            s += sign * ds;
            z = c;
            if !s.is_finite() || !inner.is_finite() {
                return Ok(Walk { nodes, limit: sign * f64::INFINITY });
            }
            nodes.push((z, inner, s));
        }
        let delta = (s - start_s).abs();
        if delta < 1e-14 * s.abs().max(1.0) {
            return Ok(Walk { nodes, limit: s });
        }
        let ratio = delta / prev_delta;
        if ratio >= 1.0 {
            growing += 1;
            if growing >= 8 {
                return Ok(Walk { nodes, limit: sign * f64::INFINITY });
            }
        } else {
            growing = 0;
        }
        if ratio < 1.0 && (ratio - prev_ratio).abs() < 1e-3 {
            steady += 1;
            if steady >= 8 {
                return Ok(Walk { nodes, limit: s + sign * delta * ratio / (1.0 - ratio) });
            }
        } else {
            steady = 0;
        }
        prev_ratio = ratio;
        prev_delta = delta;
    }
    Err(Error::Numeric(format!(
        "cannot classify the {} endpoint of the scale image",
        if up { "upper" } else { "lower" }
    )))
}

/// Scale function of a diffusion together with its image interval.
#[derive(Clone, Debug)]
pub struct ScaleMap {
    kind: Kind,
    y: f64,
    interval: (f64, f64),
    image: (f64, f64),
}

/// Builds the scale function, using closed forms for Brownian motion with
/// constant coefficients and for geometric Brownian motion.
pub fn build_scale(spec: &DiffusionSpec) -> Result<ScaleMap> {
    spec.validate()?;
    let y = spec.start;
    let (lo, hi) = spec.interval;
    let kind = match (&spec.drift, &spec.vol) {
        (d, _) if d.is_zero() => Kind::Identity,
        (Coefficient::Constant { value: xi }, Coefficient::Constant { value: sigma }) => {
            Kind::ConstantDrift { k: 2.0 * xi / (sigma * sigma) }
        }
        (Coefficient::Linear { slope: mu, intercept: a }, Coefficient::Linear { slope: c, intercept: b })
            if *a == 0.0 && *b == 0.0 && lo >= 0.0 =>
        {
            Kind::Gbm { k: 2.0 * mu / (c * c) }
        }
        _ => return build_scale_numeric(spec),
    };
    let mut map = ScaleMap { kind, y, interval: (lo, hi), image: (0.0, 0.0) };
    map.image = (map.closed_form(lo), map.closed_form(hi));
    Ok(map)
}

/// Builds the scale function by quadrature even when a closed form exists.
pub fn build_scale_numeric(spec: &DiffusionSpec) -> Result<ScaleMap> {
    spec.validate()?;
    let y = spec.start;
    let (lo, hi) = spec.interval;
    let mut knots = spec.drift.knots();
    knots.extend(spec.vol.knots());
    let down = walk(spec, false, &knots)?;
    let up = walk(spec, true, &knots)?;
    let mut z = Vec::new();
    let mut inner = Vec::new();
    let mut s = Vec::new();
    for &(a, b, c) in down.nodes.iter().rev() {
        z.push(a);
        inner.push(b);
        s.push(c);
    }
    z.push(y);
    inner.push(0.0);
    s.push(y);
    for &(a, b, c) in &up.nodes {
        z.push(a);
        inner.push(b);
        s.push(c);
    }
    Ok(ScaleMap {
        kind: Kind::Numeric(Box::new(Table { spec: spec.clone(), z, inner, s })),
        y,
        interval: (lo, hi),
        image: (down.limit, up.limit),
    })
}

impl ScaleMap {
    fn closed_form(&self, z: f64) -> f64 {
        let y = self.y;
        match self.kind {
            Kind::Identity => z,
            Kind::ConstantDrift { k } => {
                let e = -k * (z - y);
                if e == f64::INFINITY {
                    -k.signum() * f64::INFINITY
                } else {
                    y - e.exp_m1() / k
                }
            }
            Kind::Gbm { k } => {
                let r = z / y;
                let one = 1.0 - k;
                if one.abs() < 1e-12 {
                    y + y * r.ln()
                } else if r == 0.0 {
                    if one > 0.0 {
                        y - y / one
                    } else {
                        f64::NEG_INFINITY
                    }
                } else if r == f64::INFINITY {
                    if one > 0.0 {
                        f64::INFINITY
                    } else {
                        y - y / one
                    }
                } else {
                    y + y * (one * r.ln()).exp_m1() / one
                }
            }
            Kind::Numeric(ref t) => t.eval(z),
        }
    }

    /// `s(z)`; endpoints of the interval map to the endpoints of the image.
    pub fn eval(&self, z: f64) -> f64 {
        if z == self.interval.0 {
            return self.image.0;
        }
        if z == self.interval.1 {
            return self.image.1;
        }
        self.closed_form(z)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        let y = self.y;
        match self.kind {
            Kind::Identity => 1.0,
            Kind::ConstantDrift { k } => (-k * (z - y)).exp(),
            Kind::Gbm { k } => (z / y).powf(-k),
            Kind::Numeric(ref t) => t.derivative(z),
        }
    }

    /// `s⁻¹(w)`; the endpoints of the image map to the interval endpoints.
    pub fn inverse(&self, w: f64) -> f64 {
        let y = self.y;
        if w <= self.image.0 {
            return self.interval.0;
        }
        if w >= self.image.1 {
            return self.interval.1;
        }
        match self.kind {
            Kind::Identity => w,
            Kind::ConstantDrift { k } => y - (-k * (w - y)).ln_1p() / k,
            Kind::Gbm { k } => {
                let one = 1.0 - k;
                if one.abs() < 1e-12 {
                    y * ((w - y) / y).exp()
                } else {
                    y * ((one * (w - y) / y).ln_1p() / one).exp()
                }
            }
            Kind::Numeric(ref t) => t.inverse(w),
        }
    }

    pub fn start(&self) -> f64 {
        self.y
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// Image `(s(lo), s(hi))` of the state interval.
    pub fn image(&self) -> (f64, f64) {
        self.image
    }

    pub fn case(&self) -> CaseTag {
        CaseTag::from_interval(self.image.0, self.image.1)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Kind::Identity)
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self.kind, Kind::Numeric(_))
    }

    /// Pushes a law through `s` or `s⁻¹`.
    pub fn pushforward(&self, law: &Distribution, dir: Direction) -> Result<Distribution> {
        let (lo, hi) = match dir {
            Direction::Forward => self.interval,
            Direction::Inverse => self.image,
        };
        let (a, b) = law.support().expect("distributions are non-empty");
        if a < lo || b > hi {
            return Err(Error::Domain(format!("support [{a}, {b}] is outside the state space [{lo}, {hi}]")));
        }
        match dir {
            Direction::Forward => law.map_increasing(|z| self.eval(z)),
            Direction::Inverse => law.map_increasing(|w| self.inverse(w)),
        }
    }

    /// `(z, s(z))` at `n` points spread over the interval.
    pub fn table(&self, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.interval;
        let y = self.y;
        let n = n.max(2);
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                let z = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => lo + t * (hi - lo),
                    (true, false) => lo + (y - lo) * 2.0 * t / (1.0 - t),
                    (false, true) => hi - (hi - y) * 2.0 * (1.0 - t) / t,
                    (false, false) => y + (t / (1.0 - t)).ln() * y.abs().max(1.0),
                };
                (z, self.eval(z))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brownian_motion_is_natural() {
        let s = build_scale(&DiffusionSpec::brownian((f64::NEG_INFINITY, f64::INFINITY), 0.3)).unwrap();
        assert!(s.is_identity());
        assert_eq!(s.case(), CaseTag::WholeLine);
    }

    #[test]
    fn drift_closed_form_normalization() {
        let s = build_scale(&DiffusionSpec::constant(0.5, 2.0, (f64::NEG_INFINITY, f64::INFINITY), 1.0)).unwrap();
        assert!((s.eval(1.0) - 1.0).abs() < 1e-15);
        assert!((s.derivative(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(s.case(), CaseTag::BoundedAbove { upper: 1.0 + 4.0 });
        let z = 3.7;
        assert!((s.inverse(s.eval(z)) - z).abs() < 1e-12);
    }

    #[test]
    fn gbm_cases() {
        let below = build_scale(&DiffusionSpec::gbm(0.02, 0.4, 1.0)).unwrap();
        assert!(matches!(below.case(), CaseTag::BoundedBelow { .. }));
        let above = build_scale(&DiffusionSpec::gbm(0.2, 0.4, 1.0)).unwrap();
        assert!(matches!(above.case(), CaseTag::BoundedAbove { .. }));
        let line = build_scale(&DiffusionSpec::gbm(0.08, 0.4, 1.0)).unwrap();
        assert_eq!(line.case(), CaseTag::WholeLine);
        assert!((line.eval(std::f64::consts::E) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn table_matches_closed_form() {
        let mut spec = DiffusionSpec::constant(0.3, 1.2, (f64::NEG_INFINITY, f64::INFINITY), 0.5);
        spec.drift = Coefficient::ExprTable { points: vec![(-1.0, 0.3), (2.0, 0.3)] };
        let numeric = build_scale(&spec).unwrap();
        let exact = build_scale(&DiffusionSpec::constant(0.3, 1.2, (f64::NEG_INFINITY, f64::INFINITY), 0.5)).unwrap();
        assert!(!numeric.is_closed_form());
        for z in [-3.0, -0.2, 0.5, 1.0, 4.0, 10.0] {
            let (a, b) = (numeric.eval(z), exact.eval(z));
            assert!(numeric::rel_diff(a, b, 1.0) < 1e-9, "{z}: {a} vs {b}");
        }
        assert!(numeric::rel_diff(numeric.image().1, exact.image().1, 1.0) < 1e-9);
        assert_eq!(numeric.image().0, f64::NEG_INFINITY);
    }
}
