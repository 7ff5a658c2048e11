//! Barrier and ballot probabilities of a standard Brownian motion: closed
//! forms, quadrature variants on the window `[e, t]`, a Monte Carlo oracle
//! and sweeps certifying the two upper bounds with an explicit constant.

use std::f64::consts::E;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quad;
use crate::rng::StreamKey;
use crate::stats::norm_cdf;

/// Constant the bound sweeps certify.
pub const BOUND_CONSTANT: f64 = 3.0;

const TOL: f64 = 1e-12;

fn gauss(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `P(sup_{s<=t} B_s <= a) = 2Φ(a/√t) - 1`.
pub fn max_cdf(a: f64, t: f64) -> Result<f64> {
    if !(a >= 0.0) || !(t > 0.0) {
        return Err(invalid(format!("max_cdf needs a >= 0, t > 0, got ({a}, {t})")));
    }
    Ok(libm::erf(a / (2.0 * t).sqrt()))
}

/// `P(sup_{s ∈ [e, t]} B_s <= a)` by conditioning on `B_e`.
pub fn barrier_from_e(a: f64, t: f64) -> Result<f64> {
    if !(a > 0.0) || !(t > E) {
        return Err(invalid(format!("barrier_from_e needs a > 0, t > e, got ({a}, {t})")));
    }
    // x = a - u: density of B_e at a - u times the survival of the rest.
    let rest = (2.0 * (t - E)).sqrt();
    let f = |u: f64| gauss(a - u, 0.0, E) * libm::erf(u / rest);
    let hi = a + 40.0 * E.sqrt();
    let pts = quad::breakpoints(0.0, hi, &[rest.min(hi / 2.0), a]);
    Ok(quad::integrate_pieces(&f, &pts, TOL)?.clamp(0.0, 1.0))
}

/// Bridge of length `t` from `a` to `b` stays nonnegative on `[0, t]`:
/// `1 - e^{-2ab/t}`.
pub fn bridge_ballot(a: f64, b: f64, t: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0 && t > 0.0) {
        return Err(invalid(format!("bridge_ballot needs a, b >= 0, t > 0, got ({a}, {b}, {t})")));
    }
    Ok(-(-2.0 * a * b / t).exp_m1())
}

/// `∫_0^∞ p(x) g(x) dx` for a normal density `p` with the given moments.
fn integrate_positive(mean: f64, var: f64, g: impl Fn(f64) -> f64) -> Result<f64> {
    let sd = var.sqrt();
    let hi = mean.max(0.0) + 40.0 * sd;
    let mut interior = vec![sd.min(hi / 2.0)];
    if mean > 0.0 {
        interior.push(mean);
    }
    let f = |x: f64| gauss(x, mean, var) * g(x);
    quad::integrate_pieces(&f, &quad::breakpoints(0.0, hi, &interior), TOL)
}

/// Bridge of length `t > e` from `a` to `b` stays nonnegative on `[e, t]`.
pub fn bridge_ballot_from_e(a: f64, b: f64, t: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0 && t > E) {
        return Err(invalid(format!(
            "bridge_ballot_from_e needs a, b >= 0, t > e, got ({a}, {b}, {t})"
        )));
    }
    let mean = a + (b - a) * E / t;
    let var = E * (t - E) / t;
    let rest = t - E;
    Ok(integrate_positive(mean, var, |x| -(-2.0 * x * b / rest).exp_m1())?.clamp(0.0, 1.0))
}

/// The full-interval ballot computed by conditioning on the bridge at `τ`:
/// a second route to `1 - e^{-2ab/t}`.
pub fn bridge_ballot_split(a: f64, b: f64, t: f64, tau: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && tau > 0.0 && tau < t) {
        return Err(invalid(format!(
            "split ballot needs a, b > 0 and 0 < tau < t, got ({a}, {b}, {t}, {tau})"
        )));
    }
    let mean = a + (b - a) * tau / t;
    let var = tau * (t - tau) / t;
    integrate_positive(mean, var, |x| {
        (-(-2.0 * a * x / tau).exp_m1()) * (-(-2.0 * x * b / (t - tau)).exp_m1())
    })
}

/// Events estimated by [`mc_barrier`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierEvent {
    /// `sup_{[0, t]} B <= a`.
    MaxBelow { a: f64, t: f64 },
    /// `sup_{[e, t]} B <= a`.
    MaxBelowFromE { a: f64, t: f64 },
    /// Bridge `a → b` over `[0, t]` stays `>= 0`.
    BridgeAbove { a: f64, b: f64, t: f64 },
    /// Bridge `a → b` over `[0, t]` stays `>= 0` on `[e, t]`.
    BridgeAboveFromE { a: f64, b: f64, t: f64 },
}

impl BarrierEvent {
    /// The closed-form or quadrature value of the same event.
    pub fn exact(&self) -> Result<f64> {
        match *self {
            BarrierEvent::MaxBelow { a, t } => max_cdf(a, t),
            BarrierEvent::MaxBelowFromE { a, t } => barrier_from_e(a, t),
            BarrierEvent::BridgeAbove { a, b, t } => bridge_ballot(a, b, t),
            BarrierEvent::BridgeAboveFromE { a, b, t } => bridge_ballot_from_e(a, b, t),
        }
    }

    fn horizon(&self) -> f64 {
        match *self {
            BarrierEvent::MaxBelow { t, .. }
            | BarrierEvent::MaxBelowFromE { t, .. }
            | BarrierEvent::BridgeAbove { t, .. }
            | BarrierEvent::BridgeAboveFromE { t, .. } => t,
        }
    }

    fn validate(&self) -> Result<()> {
        self.exact().map(|_| ())
    }
}

/// How the barrier is checked between simulated times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Only at the step times; biased by `O(√dt)` toward survival.
    Discrete,
    /// Also kills between steps with the Brownian-bridge crossing
    /// probability `exp(-2 d_0 d_1 / h)`; exact in law for the continuous
    /// event.
    BridgeCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: u64,
}

/// One path; true if it survives.
fn survives(event: &BarrierEvent, dt: f64, monitoring: Monitoring, key: StreamKey) -> bool {
    let mut rng = key.rng();
    let t = event.horizon();
    // (start time, start value, barrier, upper?, bridge end)
    let (mut s, mut x, level, upper, end) = match *event {
        BarrierEvent::MaxBelow { a, .. } => (0.0, 0.0, a, true, None),
        BarrierEvent::MaxBelowFromE { a, .. } => {
            let z: f64 = rng.sample(StandardNormal);
            (E, E.sqrt() * z, a, true, None)
        }
        BarrierEvent::BridgeAbove { a, b, .. } => (0.0, a, 0.0, false, Some(b)),
        BarrierEvent::BridgeAboveFromE { a, b, .. } => {
            let z: f64 = rng.sample(StandardNormal);
            let mean = a + (b - a) * E / t;
            let var = E * (t - E) / t;
            (E, mean + var.sqrt() * z, 0.0, false, Some(b))
        }
    };
    // distance to the barrier, positive while alive
    let dist = |v: f64| if upper { level - v } else { v - level };
    if dist(x) < 0.0 {
        return false;
    }
    while s < t {
        let h = dt.min(t - s);
        let z: f64 = rng.sample(StandardNormal);
        let next = match end {
            None => x + h.sqrt() * z,
            Some(b) => {
                let left = t - s;
                if h >= left {
                    b
                } else {
                    x + (b - x) * h / left + (h * (left - h) / left).sqrt() * z
                }
            }
        };
        let d1 = dist(next);
        if d1 < 0.0 {
            return false;
        }
        if monitoring == Monitoring::BridgeCorrected {
            let expo = 2.0 * dist(x) * d1 / h;
            if expo < 40.0 {
                let u: f64 = rng.random();
                if u < (-expo).exp() {
                    return false;
                }
            }
        }
        x = next;
        s += h;
    }
    true
}

pub fn mc_barrier(
    event: &BarrierEvent,
    dt: f64,
    replicas: u64,
    seed: u64,
    monitoring: Monitoring,
) -> Result<McEstimate> {
    event.validate()?;
    if !(dt > 0.0 && dt <= 1e-2) {
        return Err(invalid(format!("mc_barrier needs 0 < dt <= 0.01, got {dt}")));
    }
    if replicas < 2 {
        return Err(invalid("mc_barrier needs at least 2 replicas"));
    }
    let hits: u64 = (0..replicas)
        .into_par_iter()
        .map(|r| survives(event, dt, monitoring, StreamKey::new(seed, r)) as u64)
        .sum();
    let p = hits as f64 / replicas as f64;
    Ok(McEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / (replicas - 1) as f64).sqrt(),
        replicas,
    })
}

/// Allowance for residual discretisation bias in the MC comparison.
pub const BIAS_ALLOWANCE: f64 = 0.01;

/// The three reference events of the verification suite.
pub fn reference_events() -> [(&'static str, BarrierEvent); 3] {
    [
        ("max_cdf(1, 1)", BarrierEvent::MaxBelow { a: 1.0, t: 1.0 }),
        ("barrier_from_e(2, 10)", BarrierEvent::MaxBelowFromE { a: 2.0, t: 10.0 }),
        ("bridge_ballot(1, 1, 2)", BarrierEvent::BridgeAbove { a: 1.0, b: 1.0, t: 2.0 }),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCheck {
    pub name: String,
    pub event: BarrierEvent,
    pub monitoring: Monitoring,
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
}

impl McCheck {
    pub fn deviation(&self) -> f64 {
        (self.estimate - self.exact).abs()
    }

    pub fn pass(&self) -> bool {
        self.deviation() <= 4.0 * self.stderr + BIAS_ALLOWANCE
    }
}

pub fn check_against_mc(
    name: &str,
    event: &BarrierEvent,
    dt: f64,
    replicas: u64,
    seed: u64,
    monitoring: Monitoring,
) -> Result<McCheck> {
    let mc = mc_barrier(event, dt, replicas, seed, monitoring)?;
    Ok(McCheck {
        name: name.to_string(),
        event: *event,
        monitoring,
        exact: event.exact()?,
        estimate: mc.estimate,
        stderr: mc.stderr,
    })
}

/// Worst ratio found by a bound sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSweep {
    pub max_ratio: f64,
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub points: usize,
}

impl BoundSweep {
    pub fn pass(&self) -> bool {
        self.max_ratio <= BOUND_CONSTANT
    }
}

/// Default sweep grid: `a` (and `b`) on 10 linear points of `[0.5, 5]`,
/// `t` on 40 log-spaced points of `[e + 1, 10⁴]`.
pub fn sweep_grid() -> (Vec<f64>, Vec<f64>) {
    let heights = (0..10).map(|i| 0.5 + 0.5 * i as f64).collect();
    let (lo, hi) = ((E + 1.0).ln(), 1e4f64.ln());
    let times = (0..40)
        .map(|i| {
            if i == 39 {
                1e4
            } else {
                (lo + (hi - lo) * i as f64 / 39.0).exp()
            }
        })
        .collect();
    (heights, times)
}

/// `sup P(sup_{[e,t]} B <= a) (√t + 1) / (a + 1)` over the grid.
pub fn sweep_sup_bound(heights: &[f64], times: &[f64]) -> Result<BoundSweep> {
    let mut best = BoundSweep {
        max_ratio: f64::NEG_INFINITY,
        a: 0.0,
        b: 0.0,
        t: 0.0,
        points: 0,
    };
    for &a in heights {
        for &t in times {
            let r = barrier_from_e(a, t)? * (t.sqrt() + 1.0) / (a + 1.0);
            best.points += 1;
            if r > best.max_ratio {
                (best.max_ratio, best.a, best.t) = (r, a, t);
            }
        }
    }
    Ok(best)
}

/// `sup P_bridge(B >= 0 on [e,t]) (t + 1) / ((a + 1)(b + 1))` over the grid.
pub fn sweep_ballot_bound(heights: &[f64], times: &[f64]) -> Result<BoundSweep> {
    let mut best = BoundSweep {
        max_ratio: f64::NEG_INFINITY,
        a: 0.0,
        b: 0.0,
        t: 0.0,
        points: 0,
    };
    for &a in heights {
        for &b in heights {
            for &t in times {
                let r = bridge_ballot_from_e(a, b, t)? * (t + 1.0) / ((a + 1.0) * (b + 1.0));
                best.points += 1;
                if r > best.max_ratio {
                    (best.max_ratio, best.a, best.b, best.t) = (r, a, b, t);
                }
            }
        }
    }
    Ok(best)
}

/// `2Φ(x) - 1` through the normal CDF, kept for cross-checks.
pub fn two_sided(x: f64) -> f64 {
    2.0 * norm_cdf(x) - 1.0
}

/// Expected survival overshoot of discrete monitoring: the barrier is
/// effectively moved by `β √dt`, `β = -ζ(1/2)/√(2π) ≈ 0.5826`.
pub const DISCRETE_SHIFT: f64 = 0.582_597_157_939_010_6;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_cdf_values() {
        assert_eq!(max_cdf(0.0, 3.0).unwrap(), 0.0);
        assert!((max_cdf(1.0, 1.0).unwrap() - 0.682_689_492_137_085_9).abs() < 1e-15);
        assert!((max_cdf(1.0, 1.0).unwrap() - two_sided(1.0)).abs() < 1e-14);
        assert!((max_cdf(1e3, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(max_cdf(-1.0, 1.0).is_err());
    }

    #[test]
    fn barrier_from_e_limits() {
        let a = 1.3;
        let near = barrier_from_e(a, E + 1e-9).unwrap();
        assert!((near - norm_cdf(a / E.sqrt())).abs() < 1e-4);
        assert!(barrier_from_e(a, 2.0).is_err());
        let mut last = 1.0;
        for t in [3.0, 5.0, 10.0, 100.0, 1e4] {
            let p = barrier_from_e(a, t).unwrap();
            assert!(p <= last && (0.0..=1.0).contains(&p));
            last = p;
        }
        assert!(barrier_from_e(2.0, 10.0).unwrap() > barrier_from_e(1.0, 10.0).unwrap());
        // the window starting later is less restrictive than the full one
        assert!(barrier_from_e(a, 10.0).unwrap() >= max_cdf(a, 10.0).unwrap());
    }

    #[test]
    fn ballot_values() {
        let p = bridge_ballot(1.0, 1.0, 2.0).unwrap();
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.63212).abs() < 1e-5);
        assert!(bridge_ballot(1e-12, 1.0, 2.0).unwrap() < 1e-11);
    }

    #[test]
    fn split_route_reproduces_closed_form() {
        for &(a, b, t) in &[(1.0, 1.0, 2.0), (0.5, 3.0, 10.0), (2.0, 0.7, 50.0), (5.0, 5.0, 4.0)] {
            let exact = bridge_ballot(a, b, t).unwrap();
            for tau in [0.1 * t, 0.5 * t, 0.9 * t] {
                let q = bridge_ballot_split(a, b, t, tau).unwrap();
                assert!((q - exact).abs() < 1e-8, "{a} {b} {t} {tau}: {q} vs {exact}");
            }
        }
        // with τ = e the split route bounds the windowed ballot from below
        let (a, b, t) = (1.5, 2.0, 30.0);
        assert!(bridge_ballot_split(a, b, t, E).unwrap() <= bridge_ballot_from_e(a, b, t).unwrap());
    }

    #[test]
    fn ballot_from_e_monotone() {
        let base = bridge_ballot_from_e(1.0, 1.0, 10.0).unwrap();
        assert!(bridge_ballot_from_e(2.0, 1.0, 10.0).unwrap() >= base);
        assert!(bridge_ballot_from_e(1.0, 2.0, 10.0).unwrap() >= base);
        assert!(base >= bridge_ballot(1.0, 1.0, 10.0).unwrap());
    }

    #[test]
    fn small_mc_agrees() {
        let ev = BarrierEvent::MaxBelow { a: 1.0, t: 1.0 };
        let est = mc_barrier(&ev, 1e-2, 20_000, 5, Monitoring::BridgeCorrected).unwrap();
        let exact = ev.exact().unwrap();
        assert!((est.estimate - exact).abs() < 4.0 * est.stderr + 1e-3, "{est:?} vs {exact}");
        assert!(mc_barrier(&ev, 0.1, 10, 5, Monitoring::Discrete).is_err());
    }

    #[test]
    fn sweeps_on_a_small_grid() {
        let s = sweep_sup_bound(&[0.5, 5.0], &[E + 1.0, 1e4]).unwrap();
        assert!(s.pass() && s.points == 4);
        let b = sweep_ballot_bound(&[0.5, 5.0], &[E + 1.0, 1e4]).unwrap();
        assert!(b.pass() && b.points == 8);
    }
}
