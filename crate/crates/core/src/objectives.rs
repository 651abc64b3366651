//! Law-invariant preference functionals: expected utility, rank-dependent
//! utility and cautious stochastic choice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Distribution, Piece};
use crate::numeric;

/// Curvature of a utility or weighting function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Linear,
    Concave,
    Convex,
    Neither,
}

/// Strictly increasing utility function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum UtilityFn {
    Linear,
    /// `coefficient * z^exponent` on `[0, ∞)`.
    Power {
        exponent: f64,
        #[serde(default = "one")]
        coefficient: f64,
    },
    /// `√z` on `[0, ∞)`.
    Sqrt,
    /// `(1 - e^{-rate z}) / rate` on the real line.
    Exponential {
        rate: f64,
    },
    /// Linear interpolation of `(z, u)` knots, extended linearly outside.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

const FD_STEP: f64 = 1e-6;

fn one() -> f64 {
    1.0
}

impl UtilityFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            UtilityFn::Power { exponent, coefficient }
                if !(*exponent > 0.0 && exponent.is_finite() && *coefficient > 0.0 && coefficient.is_finite()) =>
            {
                Err(Error::Config(format!(
                    "power utility needs positive exponent and coefficient, got {exponent} and {coefficient}"
                )))
            }
            UtilityFn::Exponential { rate } if !rate.is_finite() => Err(Error::Config("rate must be finite".into())),
            UtilityFn::PiecewiseLinear { knots } => {
                let ok = knots.len() >= 2 && knots.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
                if ok {
                    Ok(())
                } else {
                    Err(Error::Config("piecewise-linear knots must be strictly increasing in both coordinates".into()))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn power(exponent: f64) -> Self {
        UtilityFn::Power { exponent, coefficient: 1.0 }
    }

    /// Closed domain `[lo, hi]` on which the utility is defined.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            UtilityFn::Power { .. } | UtilityFn::Sqrt => (0.0, f64::INFINITY),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn check_support(&self, d: &Distribution) -> Result<()> {
        let (lo, hi) = self.domain();
        let (a, b) = d.support().expect("non-empty");
        if a < lo || b > hi {
            return Err(Error::Domain(format!("support [{a}, {b}] is outside the utility domain [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn value(&self, z: f64) -> f64 {
        match self {
            UtilityFn::Linear => z,
            UtilityFn::Power { exponent, coefficient } => coefficient * z.powf(*exponent),
            UtilityFn::Sqrt => z.sqrt(),
            UtilityFn::Exponential { rate } => {
                if *rate == 0.0 {
                    z
                } else {
                    -(-rate * z).exp_m1() / rate
                }
            }
            UtilityFn::PiecewiseLinear { knots } => interpolate(knots, z, false),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            UtilityFn::Linear => 1.0,
            UtilityFn::Power { exponent, coefficient } => coefficient * exponent * z.powf(exponent - 1.0),
            UtilityFn::Sqrt => 0.5 / z.sqrt(),
            UtilityFn::Exponential { rate } => (-rate * z).exp(),
            UtilityFn::PiecewiseLinear { .. } => (self.value(z + FD_STEP) - self.value(z - FD_STEP)) / (2.0 * FD_STEP),
        }
    }

    /// `u⁻¹(v)`.
    pub fn inverse(&self, v: f64) -> f64 {
        match self {
            UtilityFn::Linear => v,
            UtilityFn::Power { exponent, coefficient } => (v / coefficient).max(0.0).powf(1.0 / exponent),
            UtilityFn::Sqrt => v.max(0.0) * v.max(0.0),
            UtilityFn::Exponential { rate } => {
                if *rate == 0.0 {
                    v
                } else {
                    -(-rate * v).ln_1p() / rate
                }
            }
            UtilityFn::PiecewiseLinear { knots } => interpolate(knots, v, true),
        }
    }

    /// `(u')⁻¹(y)` when the derivative is strictly monotone.
    pub fn inverse_derivative(&self, y: f64) -> Option<f64> {
        match self {
            UtilityFn::Power { exponent, coefficient } if *exponent != 1.0 => {
                Some((y / (coefficient * exponent)).powf(1.0 / (exponent - 1.0)))
            }
            UtilityFn::Sqrt => Some(0.25 / (y * y)),
            UtilityFn::Exponential { rate } if *rate != 0.0 => Some(-y.ln() / rate),
            _ => None,
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            UtilityFn::Linear => Shape::Linear,
            UtilityFn::Power { exponent, .. } => match exponent.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Less) => Shape::Concave,
                Some(std::cmp::Ordering::Greater) => Shape::Convex,
                _ => Shape::Linear,
            },
            UtilityFn::Sqrt => Shape::Concave,
            UtilityFn::Exponential { rate } => match rate.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => Shape::Concave,
                Some(std::cmp::Ordering::Less) => Shape::Convex,
                _ => Shape::Linear,
            },
            UtilityFn::PiecewiseLinear { knots } => {
                let slopes: Vec<f64> = knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
                if slopes.windows(2).all(|s| s[0] == s[1]) {
                    Shape::Linear
                } else if slopes.windows(2).all(|s| s[0] >= s[1]) {
                    Shape::Concave
                } else if slopes.windows(2).all(|s| s[0] <= s[1]) {
                    Shape::Convex
                } else {
                    Shape::Neither
                }
            }
        }
    }
}

/// Piecewise-linear interpolation with linear extension; `inverse` swaps the axes.
fn interpolate(knots: &[(f64, f64)], t: f64, inverse: bool) -> f64 {
    let key = |k: &(f64, f64)| if inverse { k.1 } else { k.0 };
    let val = |k: &(f64, f64)| if inverse { k.0 } else { k.1 };
    let n = knots.len();
    let j = knots.partition_point(|k| key(k) <= t).clamp(1, n - 1);
    let (p, q) = (&knots[j - 1], &knots[j]);
    val(p) + (val(q) - val(p)) * (t - key(p)) / (key(q) - key(p))
}

/// Probability weighting function `w: [0, 1] -> [0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum WeightingFn {
    Identity,
    /// `p^gamma`.
    Power {
        gamma: f64,
    },
    /// `p^γ / (p^γ + (1-p)^γ)^{1/γ}`.
    TverskyKahneman {
        gamma: f64,
    },
    /// `exp(-(-ln p)^alpha)`.
    Prelec {
        alpha: f64,
    },
}

impl WeightingFn {
    pub fn validate(&self) -> Result<()> {
        let p = match self {
            WeightingFn::Identity => return Ok(()),
            WeightingFn::Power { gamma } | WeightingFn::TverskyKahneman { gamma } => *gamma,
            WeightingFn::Prelec { alpha } => *alpha,
        };
        if p > 0.0 && p.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("weighting parameter must be positive, got {p}")))
        }
    }

    pub fn value(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            WeightingFn::Identity => p,
            WeightingFn::Power { gamma } => p.powf(*gamma),
            WeightingFn::TverskyKahneman { gamma } => {
                let g = *gamma;
                p.powf(g) / (p.powf(g) + (1.0 - p).powf(g)).powf(1.0 / g)
            }
            WeightingFn::Prelec { alpha } => {
                if p == 0.0 {
                    0.0
                } else {
                    (-(-p.ln()).powf(*alpha)).exp()
                }
            }
        }
    }

    pub fn derivative(&self, p: f64) -> f64 {
        match self {
            WeightingFn::Identity => 1.0,
            WeightingFn::Power { gamma } => gamma * p.powf(gamma - 1.0),
            WeightingFn::TverskyKahneman { gamma } => {
                let g = *gamma;
                let d = p.powf(g) + (1.0 - p).powf(g);
                let w = self.value(p);
                w * (g / p - (p.powf(g - 1.0) - (1.0 - p).powf(g - 1.0)) / d)
            }
            WeightingFn::Prelec { alpha } => {
                let l = -p.ln();
                self.value(p) * alpha * l.powf(alpha - 1.0) / p
            }
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            WeightingFn::Identity => Shape::Linear,
            WeightingFn::Power { gamma } if *gamma == 1.0 => Shape::Linear,
            WeightingFn::Power { gamma } if *gamma < 1.0 => Shape::Concave,
            WeightingFn::Power { .. } => Shape::Convex,
            _ => Shape::Neither,
        }
    }
}

/// `E[u(Z)]` for `Z ~ d`.
pub fn eval_eu(u: &UtilityFn, d: &Distribution) -> Result<f64> {
    u.check_support(d)?;
    let v = d.integrate(|z| u.value(z));
    if !v.is_finite() {
        return Err(Error::Numeric("expected utility is not finite".into()));
    }
    Ok(v)
}

/// Sub-cells per slab in the rank-dependent integral.
const RDU_SUBCELLS: usize = 8;

/// `∫ v(G(u)) w'(1-u) du`, written as a sum of weighted increments.
pub fn eval_rdu(v: &UtilityFn, w: &WeightingFn, d: &Distribution) -> Result<f64> {
    v.check_support(d)?;
    let total = d.total_mass();
    let cum = d.cumulative();
    let mut acc = 0.0;
    for (k, p) in d.pieces().iter().enumerate() {
        let (u0, u1) = (cum[k] / total, cum[k + 1] / total);
        match *p {
            Piece::Atom { loc, .. } => acc += v.value(loc) * (w.value(1.0 - u0) - w.value(1.0 - u1)),
            Piece::Slab { .. } => {
                for j in 0..RDU_SUBCELLS {
                    let a = u0 + (u1 - u0) * j as f64 / RDU_SUBCELLS as f64;
                    let b = u0 + (u1 - u0) * (j + 1) as f64 / RDU_SUBCELLS as f64;
                    let z = p.position(((a + b) * 0.5 - u0) / (u1 - u0));
                    acc += v.value(z) * (w.value(1.0 - a) - w.value(1.0 - b));
                }
            }
        }
    }
    if !acc.is_finite() {
        return Err(Error::Numeric("rank-dependent value is not finite".into()));
    }
    Ok(acc)
}

/// Rank-dependent value of a law given by its quantile function. The closure
/// receives `(u, 1 - u)`.
pub fn eval_rdu_quantile<G: Fn(f64, f64) -> f64>(v: &UtilityFn, w: &WeightingFn, g: G) -> Result<f64> {
    let val = numeric::integrate_unit(&|u, q| {
        let dw = w.derivative(q);
        if dw == 0.0 {
            0.0
        } else {
            dw * v.value(g(u, q))
        }
    });
    if !val.is_finite() {
        return Err(Error::Numeric("rank-dependent value is not finite".into()));
    }
    Ok(val)
}

/// `u⁻¹(E[u(Z)])`.
pub fn certainty_equivalent(u: &UtilityFn, d: &Distribution) -> Result<f64> {
    Ok(u.inverse(eval_eu(u, d)?))
}

/// Smallest certainty equivalent over the family.
pub fn eval_csc(family: &[UtilityFn], d: &Distribution) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::Config("cautious stochastic choice needs at least one utility".into()));
    }
    let mut best = f64::INFINITY;
    for u in family {
        best = best.min(certainty_equivalent(u, d)?);
    }
    Ok(best)
}

/// A preference functional on laws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    Eu { utility: UtilityFn },
    Rdu { utility: UtilityFn, weighting: WeightingFn },
    Csc { utilities: Vec<UtilityFn> },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::Eu { utility } => utility.validate(),
            Objective::Rdu { utility, weighting } => {
                utility.validate()?;
                weighting.validate()
            }
            Objective::Csc { utilities } => {
                if utilities.is_empty() {
                    return Err(Error::Config("csc objective needs utilities".into()));
                }
                utilities.iter().try_for_each(UtilityFn::validate)
            }
        }
    }

    pub fn evaluate(&self, d: &Distribution) -> Result<f64> {
        match self {
            Objective::Eu { utility } => eval_eu(utility, d),
            Objective::Rdu { utility, weighting } => eval_rdu(utility, weighting, d),
            Objective::Csc { utilities } => eval_csc(utilities, d),
        }
    }

    /// Domain shared by all utilities of the objective.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Objective::Eu { utility } | Objective::Rdu { utility, .. } => utility.domain(),
            Objective::Csc { utilities } => utilities
                .iter()
                .map(UtilityFn::domain)
                .fold((f64::NEG_INFINITY, f64::INFINITY), |a, b| (a.0.max(b.0), a.1.min(b.1))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Eu { .. } => "eu",
            Objective::Rdu { .. } => "rdu",
            Objective::Csc { .. } => "csc",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weighting_reduces_to_expected_utility() {
        let d = Distribution::from_atoms(&[(0.0, 0.2), (1.0, 0.5), (4.0, 0.3)]).unwrap();
        let u = UtilityFn::Sqrt;
        let a = eval_rdu(&u, &WeightingFn::Identity, &d).unwrap();
        let b = eval_eu(&u, &d).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn power_weighting_on_two_points() {
        let d = Distribution::from_atoms(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let v = eval_rdu(&UtilityFn::Linear, &WeightingFn::Power { gamma: 2.0 }, &d).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn certainty_equivalent_of_dirac() {
        let d = Distribution::dirac(2.0).unwrap();
        for u in [UtilityFn::Sqrt, UtilityFn::power(3.0), UtilityFn::Exponential { rate: -0.7 }] {
            assert!((certainty_equivalent(&u, &d).unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn piecewise_linear_inverse() {
        let u = UtilityFn::PiecewiseLinear { knots: vec![(0.0, 0.0), (2.0, 2.0), (3.0, 2.5), (4.0, 3.5)] };
        for z in [-1.0, 0.5, 2.2, 3.5, 7.0] {
            assert!((u.inverse(u.value(z)) - z).abs() < 1e-12);
        }
        assert_eq!(u.value(5.0), 4.5);
        assert_eq!(u.shape(), Shape::Neither);
    }

    #[test]
    fn weighting_derivatives() {
        for w in [
            WeightingFn::Power { gamma: 0.6 },
            WeightingFn::TverskyKahneman { gamma: 0.61 },
            WeightingFn::Prelec { alpha: 0.65 },
        ] {
            for p in [0.1, 0.4, 0.8] {
                let h = 1e-6;
                let fd = (w.value(p + h) - w.value(p - h)) / (2.0 * h);
                assert!((fd - w.derivative(p)).abs() < 1e-6, "{w:?} at {p}");
            }
        }
    }

    #[test]
    fn power_utility_rejects_negative_support() {
        let d = Distribution::from_atoms(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!(matches!(eval_eu(&UtilityFn::Sqrt, &d), Err(Error::Domain(_))));
    }
}
