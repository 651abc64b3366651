//! Quadrature and root-finding helpers shared by the other modules.

use std::sync::OnceLock;

use roots::{find_root_brent, Convergency};

use crate::error::{Error, Result};

const GL_ORDER: usize = 20;

fn gl_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = GL_ORDER;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

/// Fixed-order Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gl_table().iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Adaptive Simpson quadrature with a relative tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    let out = simpson_step(f, a, b, fa, fm, fb, whole, rel_tol * scale, 48)?;
    if !out.is_finite() {
        return Err(Error::Numeric(format!("non-finite integral on [{a}, {b}]")));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || m <= a || m >= b {
        if delta.abs() <= 1e3 * tol.max(f64::EPSILON * whole.abs()) {
            return Ok(left + right + delta / 15.0);
        }
        return Err(Error::Numeric(format!("adaptive Simpson did not converge near [{a}, {b}]")));
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Sum of Gauss-Legendre panels on `[t*2^-(k+1), t*2^-k]`, k = 0, 1, ...,
/// i.e. the integral of `g` over `(0, t]` with geometric grading toward 0.
/// A geometric tail is added once the panels decay regularly.
fn graded_to_zero<F: Fn(f64) -> f64>(g: &F, t: f64) -> f64 {
    let mut sum = 0.0;
    let mut prev = f64::NAN;
    let mut hi = t;
    for k in 0..1000 {
        let lo = 0.5 * hi;
        let piece = gauss_legendre(g, lo, hi);
        if !piece.is_finite() {
            return f64::NAN;
        }
        sum += piece;
        if k > 4 && piece.abs() <= 1e-17 * sum.abs().max(1e-300) {
            let r = piece / prev;
            if r.is_finite() && r > 0.0 && r < 1.0 {
                sum += piece * r / (1.0 - r);
            }
            return sum;
        }
        if lo == 0.0 {
            break;
        }
        prev = piece;
        hi = lo;
    }
    sum
}

/// Integral over `[u0, u1] ⊂ [0, 1]` of `f(u, q)` with `q = 1 - u`.
///
/// Both coordinates are supplied so that integrands singular at either end
/// of the unit interval can be resolved: near `u = 0` nodes are generated in
/// `u`, near `u = 1` in `q`.
pub fn integrate_cell<F: Fn(f64, f64) -> f64>(f: &F, u0: f64, u1: f64) -> f64 {
    if u0 >= u1 {
        return 0.0;
    }
    if u0 <= 0.0 && u1 >= 1.0 {
        return integrate_cell(f, 0.0, 0.5) + integrate_cell(f, 0.5, 1.0);
    }
    if u0 <= 0.0 {
        if u1 > 0.5 {
            return integrate_cell(f, 0.0, 0.5) + integrate_cell(f, 0.5, u1);
        }
        return graded_to_zero(&|u: f64| f(u, 1.0 - u), u1);
    }
    if u1 >= 1.0 {
        let q1 = 1.0 - u0;
        if q1 > 0.5 {
            return integrate_cell(f, u0, 0.5) + integrate_cell(f, 0.5, 1.0);
        }
        return graded_to_zero(&|q: f64| f(1.0 - q, q), q1);
    }
    let panels = 2;
    let mut sum = 0.0;
    if u0 >= 0.5 {
        let (q_hi, q_lo) = (1.0 - u0, 1.0 - u1);
        let h = (q_hi - q_lo) / panels as f64;
        for i in 0..panels {
            let a = q_lo + h * i as f64;
            sum += gauss_legendre(|q| f(1.0 - q, q), a, a + h);
        }
    } else {
        let h = (u1 - u0) / panels as f64;
        for i in 0..panels {
            let a = u0 + h * i as f64;
            sum += gauss_legendre(|u| f(u, 1.0 - u), a, a + h);
        }
    }
    sum
}

/// Integral over the open unit interval, tolerating integrable endpoint singularities.
pub fn integrate_unit<F: Fn(f64, f64) -> f64>(f: &F) -> f64 {
    integrate_cell(f, 0.0, 1.0)
}

/// Plain bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(Error::Numeric(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

struct XTolerance {
    tol: f64,
    max_iter: usize,
}

impl Convergency<f64> for XTolerance {
    fn is_root_found(&mut self, y: f64) -> bool {
        y == 0.0
    }
    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= self.tol * x1.abs().max(1.0)
    }
    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= self.max_iter
    }
}

/// Brent's method; `tol` is relative to `max(|x|, 1)`.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let mut conv = XTolerance { tol, max_iter: 500 };
    find_root_brent(lo, hi, &mut f, &mut conv)
        .map_err(|e| Error::Numeric(format!("Brent root search on [{lo}, {hi}] failed: {e:?}")))
}

/// Relative difference `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
