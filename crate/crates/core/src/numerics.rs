//! Special functions and root-finding primitives.
//!
//! Everything here is a pure function of its arguments. Rates are in bits/s,
//! bandwidths in Hz and noise powers in W.
//!
//! The transmit-energy model is `f(x) = N0 (2^(x/B) - 1)`; its derivative,
//! the derivative's inverse and the tangent intercept `g(x) = f(x) - x f'(x)`
//! are the building blocks of every threshold policy in the crate. The
//! inverse of `g` needs the principal branch of the Lambert W function close
//! to its branch point, so W0 is evaluated through the offset from `-1/e`
//! rather than through the raw argument.

use std::f64::consts::{E, LN_2};

use crate::error::{Error, Result};

/// `1/e`, the magnitude of the Lambert W branch point.
pub const INV_E: f64 = 1.0 / E;

/// Arguments this far below `-1/e` are treated as rounding noise and clamped.
pub const BRANCH_CLAMP: f64 = 1e-12;

/// `H(p) = p e^p - (e^p - 1)`, accurate for small `p`.
///
/// `H` is increasing on `p >= 0` with `H(0) = 0` and `H'(p) = p e^p`.
fn tangent_gap(p: f64) -> f64 {
    if p.abs() < 0.5 {
        // sum_{n>=2} (n-1) p^n / n!
        let mut term = p; // p^n / n! at n = 1
        let mut sum = 0.0;
        for n in 2..40 {
            term *= p / n as f64;
            let add = (n as f64 - 1.0) * term;
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        p * p.exp() - p.exp_m1()
    }
}

/// Solves `H(p) = c` for `p >= 0`, i.e. `p = W0((c - 1)/e) + 1`.
fn tangent_gap_inverse(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    if c < 0.75 {
        // H(p) >= p^2/2, so this start lies right of the root and Newton on
        // the convex increasing H descends monotonically.
        let mut p = (2.0 * c).sqrt();
        for _ in 0..100 {
            let step = (tangent_gap(p) - c) / (p * p.exp());
            p -= step;
            if step.abs() <= 1e-16 * p {
                break;
            }
        }
        p
    } else {
        // c - 1 >= -1/4 keeps the argument well away from the branch point.
        let arg = (c - 1.0) / E;
        let w = if arg > 1e3 {
            lambert_w0_exp((c - 1.0).ln() - 1.0)
        } else {
            halley_w0(arg)
        };
        w + 1.0
    }
}

/// Halley iteration on `w e^w = x` for `x >= -1/4`.
fn halley_w0(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut w = if x < 1.0 {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln().max(0.0);
        l1 - l2 + if l1 > 0.0 { l2 / l1 } else { 0.0 }
    };
    for _ in 0..64 {
        let ew = w.exp();
        let resid = w * ew - x;
        let wp1 = w + 1.0;
        let step = resid / (ew * wp1 - (w + 2.0) * resid / (2.0 * wp1));
        w -= step;
        if step.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Principal-branch Lambert W of `e^log_x`, usable when `e^log_x` overflows.
pub fn lambert_w0_exp(log_x: f64) -> f64 {
    if log_x < 1.5 {
        return lambert_w0(log_x.exp()).unwrap_or(0.0);
    }
    // Solve w + ln w = L.
    let l = log_x;
    let mut w = l - l.ln() + l.ln() / l;
    for _ in 0..64 {
        let h = w + w.ln() - l;
        let d1 = 1.0 + 1.0 / w;
        let d2 = -1.0 / (w * w);
        let step = h / (d1 - h * d2 / (2.0 * d1));
        w -= step;
        if step.abs() <= 1e-16 * w {
            break;
        }
    }
    w
}

/// Principal branch of the Lambert W function: the `w >= -1` with `w e^w = x`.
///
/// Arguments up to [`BRANCH_CLAMP`] below `-1/e` are clamped onto the branch
/// point.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::domain("lambert_w0 of NaN"));
    }
    let delta = x + INV_E;
    if delta < -BRANCH_CLAMP {
        return Err(Error::domain(format!("lambert_w0 argument {x:e} is below -1/e")));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if delta <= 0.0 {
        return Ok(-1.0);
    }
    if x < -0.25 {
        // Near the branch point: W0(-1/e + d) = p - 1 with H(p) = e d.
        return Ok(tangent_gap_inverse(E * delta) - 1.0);
    }
    if x > 1e3 {
        return Ok(lambert_w0_exp(x.ln()));
    }
    Ok(halley_w0(x))
}

/// `W0(-1/e + delta) + 1` for `delta >= 0`, without the cancellation of
/// forming the argument explicitly.
pub fn lambert_w0_branch_offset(delta: f64) -> Result<f64> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::domain(format!("branch offset {delta:e} must be non-negative")));
    }
    Ok(tangent_gap_inverse(E * delta))
}

fn check_link(bandwidth: f64, noise: f64) -> Result<()> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::domain(format!("bandwidth {bandwidth:e} must be positive")));
    }
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(Error::domain(format!("noise power {noise:e} must be positive")));
    }
    Ok(())
}

/// Transmit power needed for `rate` bits/s: `N0 (2^(rate/B) - 1)`.
pub fn f_energy(rate: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    check_link(bandwidth, noise)?;
    if !(rate >= 0.0) {
        return Err(Error::domain(format!("rate {rate:e} must be non-negative")));
    }
    Ok(noise * (rate * LN_2 / bandwidth).exp_m1())
}

/// Derivative of [`f_energy`] with respect to the rate.
pub fn f_prime(rate: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    check_link(bandwidth, noise)?;
    if !(rate >= 0.0) {
        return Err(Error::domain(format!("rate {rate:e} must be non-negative")));
    }
    Ok(noise * LN_2 / bandwidth * (rate * LN_2 / bandwidth).exp())
}

/// Rate at which the slope of [`f_energy`] equals `slope`:
/// `B log2(B slope / (N0 ln 2))`.
pub fn f_prime_inverse(slope: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    check_link(bandwidth, noise)?;
    let floor = noise * LN_2 / bandwidth;
    if !(slope >= floor * (1.0 - 1e-12)) {
        return Err(Error::domain(format!(
            "slope {slope:e} is below f'(0) = {floor:e}"
        )));
    }
    Ok((bandwidth * (slope / floor).log2()).max(0.0))
}

/// `g(x) = f(x) - x f'(x)`, zero at the origin and strictly decreasing.
pub fn g_fun(rate: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    check_link(bandwidth, noise)?;
    if !(rate >= 0.0) {
        return Err(Error::domain(format!("rate {rate:e} must be non-negative")));
    }
    // With u = x ln2 / B: g = N0 ((1 - u) e^u - 1) = -N0 H(u).
    Ok(-noise * tangent_gap(rate * LN_2 / bandwidth))
}

/// Inverse of [`g_fun`] on `y <= 0`: `B (W0((y + N0)/(-N0 e)) + 1) / ln 2`.
pub fn g_inverse(y: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    check_link(bandwidth, noise)?;
    if !(y <= 0.0) {
        return Err(Error::domain(format!("g_inverse argument {y:e} must be non-positive")));
    }
    Ok(bandwidth * tangent_gap_inverse(-y / noise) / LN_2)
}

/// Solves `x ln x + p x = q` for `q > 0`: `x = q / W0(q e^p)`.
pub fn solve_xlnx(p: f64, q: f64) -> Result<f64> {
    if !(q > 0.0) || !p.is_finite() {
        return Err(Error::domain(format!("solve_xlnx needs q > 0 (q = {q:e}, p = {p:e})")));
    }
    let w = lambert_w0_exp(q.ln() + p);
    // q / w = e^(w - p); the exponential form avoids 0/0 when q e^p underflows.
    if w < 1.0 {
        Ok((w - p).exp())
    } else {
        Ok(q / w)
    }
}

/// Search interval and stopping rule for [`bisect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionSpec {
    pub lo: f64,
    pub hi: f64,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
}

impl BisectionSpec {
    pub const DEFAULT_TOL_ABS: f64 = 1e-10;
    pub const DEFAULT_TOL_REL: f64 = 1e-9;
    pub const DEFAULT_MAX_ITER: usize = 200;

    pub fn new(lo: f64, hi: f64) -> Self {
        BisectionSpec {
            lo,
            hi,
            tol_abs: Self::DEFAULT_TOL_ABS,
            tol_rel: Self::DEFAULT_TOL_REL,
            max_iter: Self::DEFAULT_MAX_ITER,
        }
    }

    pub fn tolerances(mut self, tol_abs: f64, tol_rel: f64) -> Self {
        self.tol_abs = tol_abs;
        self.tol_rel = tol_rel;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::invalid(format!(
                "bisection needs lo < hi, got [{:e}, {:e}]",
                self.lo, self.hi
            )));
        }
        if !(self.tol_abs > 0.0 || self.tol_rel > 0.0) {
            return Err(Error::invalid("bisection needs a positive tolerance"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("bisection needs max_iter >= 1"));
        }
        Ok(())
    }
}

/// Result of a converged [`bisect`] call. `[lo, hi]` is the final bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOutcome {
    pub root: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

/// Bisection on a sign change of `evaluate` over `[spec.lo, spec.hi]`.
///
/// Stops when the bracket is narrower than `tol_abs` or `tol_rel * |mid|`, or
/// when the map evaluates to exactly zero. Works for step-shaped monotone maps
/// too: the returned bracket then encloses the jump.
pub fn bisect<F>(mut evaluate: F, spec: &BisectionSpec) -> Result<BisectionOutcome>
where
    F: FnMut(f64) -> f64,
{
    spec.validate()?;
    let (mut lo, mut hi) = (spec.lo, spec.hi);
    let f_lo = evaluate(lo);
    let f_hi = evaluate(hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::domain("bisection map returned NaN at an endpoint"));
    }
    if f_lo == 0.0 {
        return Ok(BisectionOutcome { root: lo, lo, hi: lo, iterations: 0 });
    }
    if f_hi == 0.0 {
        return Ok(BisectionOutcome { root: hi, lo: hi, hi, iterations: 0 });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoBracket { lo, hi, f_lo, f_hi });
    }
    let lo_sign = f_lo.signum();
    for iteration in 1..=spec.max_iter {
        let mid = 0.5 * (lo + hi);
        let f_mid = evaluate(mid);
        if f_mid.is_nan() {
            return Err(Error::domain(format!("bisection map returned NaN at {mid:e}")));
        }
        if f_mid == 0.0 {
            return Ok(BisectionOutcome { root: mid, lo: mid, hi: mid, iterations: iteration });
        }
        if f_mid.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
        let width = hi - lo;
        let mid = 0.5 * (lo + hi);
        if width <= spec.tol_abs || width <= spec.tol_rel * mid.abs() || mid == lo || mid == hi {
            return Ok(BisectionOutcome { root: mid, lo, hi, iterations: iteration });
        }
    }
    Err(Error::NoConvergence(spec.max_iter))
}
