//! Adaptive quadrature over a finite interval.
//!
//! Simpson's rule with interval bisection: each subinterval is accepted once
//! the Richardson estimate `|S_halves - S_whole| / 15` drops below its share
//! of the tolerance budget, and the accepted value keeps the Richardson
//! correction (locally sixth order). Semi-infinite integrals are the caller's
//! responsibility: truncate where an analytic tail bound is available and add
//! the remainder by hand.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    /// Refinement hit the recursion depth cap before the error budget was
    /// met, typically because the integrand is singular or non-integrable
    /// on the requested interval.
    #[error("quadrature did not converge near [{a}, {b}] (depth {depth})")]
    NoConvergence { a: f64, b: f64, depth: u32 },
}

const MAX_DEPTH: u32 = 48;

/// Integrate `f` over `[a, b]` to absolute accuracy `tol`.
///
/// `a > b` is allowed and flips the sign. `tol` must be positive and finite.
pub fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    assert!(tol > 0.0 && tol.is_finite(), "quad: tol must be positive");
    assert!(a.is_finite() && b.is_finite(), "quad: endpoints must be finite");
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    refine(&f, a, b, fa, fm, fb, whole, tol, 0)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadError> {
    let m = 0.5 * (a + b);
    let ml = 0.5 * (a + m);
    let mr = 0.5 * (m + b);
    let fml = f(ml);
    let fmr = f(mr);
    let left = simpson(a, m, fa, fml, fm);
    let right = simpson(m, b, fm, fmr, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || !delta.is_finite() {
        if delta.is_finite() {
            // Richardson extrapolation: the Simpson error model gives the
            // halved-interval sum plus delta/15 as the next-order estimate.
            return Ok(left + right + delta / 15.0);
        }
        return Err(QuadError::NoConvergence { a, b, depth });
    }
    if depth >= MAX_DEPTH {
        return Err(QuadError::NoConvergence { a, b, depth });
    }
    let half_tol = 0.5 * tol;
    let vl = refine(f, a, m, fa, fml, fm, left, half_tol, depth + 1)?;
    let vr = refine(f, m, b, fm, fmr, fb, right, half_tol, depth + 1)?;
    Ok(vl + vr)
}
