//! Adaptive Simpson quadrature.
//!
//! Absolute-tolerance, recursive bisection with the usual Richardson
//! correction. Callers split the range at known kinks before integrating,
//! which keeps the recursion shallow for the piecewise-smooth integrands
//! used throughout the crate.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 48;
/// Refinement stops once a panel's correction is rounding noise.
const NOISE: f64 = 64.0 * f64::EPSILON;
/// Evaluation budget per call; past it panels are accepted and reported.
const MAX_EVALS: usize = 4_000_000;

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return adaptive_simpson(f, b, a, tol).map(|v| -v);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut state = State { worst: 0.0, evals: 3 };
    let value = recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut state);
    let worst = state.worst;
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite integral on [{a}, {b}]"
        )));
    }
    if worst > tol {
        return Err(Error::Quadrature {
            achieved: worst,
            requested: tol,
        });
    }
    Ok(value)
}

/// Integrate over consecutive pieces `[p0, p1], [p1, p2], ...`, splitting the
/// tolerance in proportion to piece length.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, points: &[f64], tol: f64) -> Result<f64> {
    if points.len() < 2 {
        return Ok(0.0);
    }
    let total = (points[points.len() - 1] - points[0]).abs();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for w in points.windows(2) {
        let share = ((w[1] - w[0]).abs() / total).max(1e-6);
        sum += adaptive_simpson(f, w[0], w[1], tol * share)?;
    }
    Ok(sum)
}

/// Sorted, deduplicated breakpoints restricted to `[a, b]`, endpoints included.
pub fn breakpoints(a: f64, b: f64, interior: &[f64]) -> Vec<f64> {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = interior
        .iter()
        .copied()
        .filter(|p| p.is_finite() && *p > a && *p < b)
        .collect();
    inner.sort_by(|x, y| x.total_cmp(y));
    inner.dedup();
    pts.extend(inner);
    pts.push(b);
    pts
}

struct State {
    worst: f64,
    evals: usize,
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    state: &mut State,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    state.evals += 2;
    let delta = left + right - whole;
    let converged = delta.abs() <= 15.0 * tol || delta.abs() <= NOISE * (left.abs() + right.abs());
    if converged || depth == 0 || state.evals >= MAX_EVALS {
        if !converged {
            state.worst += delta.abs() / 15.0;
        }
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, state)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-13);
    }

    #[test]
    fn tolerance_below_rounding_still_terminates() {
        let v = adaptive_simpson(&|x: f64| (-x * x).exp(), -8.0, 8.0, 1e-300).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        let kink = adaptive_simpson(&|x: f64| x.abs().sqrt(), -1.0, 2.0, 1e-300);
        assert!(matches!(kink, Ok(_) | Err(Error::Quadrature { .. })));
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let v = adaptive_simpson(&f64::exp, 1.0, 0.0, 1e-12).unwrap();
        assert!((v + (std::f64::consts::E - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn kink_handled_by_pieces() {
        let f = |x: f64| (x - 0.3).abs();
        let v = integrate_pieces(&f, &breakpoints(0.0, 1.0, &[0.3]), 1e-12).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-12);
    }

    #[test]
    fn unbounded_integrand_reports_achieved_tolerance() {
        let err = adaptive_simpson(&|x: f64| 1.0 / x.sqrt().max(1e-300), 0.0, 1.0, 1e-14)
            .unwrap_err();
        match err {
            Error::Quadrature { achieved, requested } => {
                assert!(achieved > requested);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
