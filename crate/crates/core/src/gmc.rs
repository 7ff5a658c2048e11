//! Discretised chaos measures, barrier functions and the good-point mask.

use std::f64::consts::{E, SQRT_2};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::LayeredFieldSample;

const CRITICAL_TOL: f64 = 1e-12;
/// Exponents are clamped here before exponentiation.
const MAX_EXPONENT: f64 = 700.0;
/// The good-event time must sit within this distance above a grid level.
pub const MAX_LEVEL_ROUNDING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GmcParams {
    pub gamma: f64,
    pub t: f64,
    pub critical: bool,
}

impl GmcParams {
    pub fn new(gamma: f64, t: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= SQRT_2 + CRITICAL_TOL) {
            return Err(invalid(format!("gamma must lie in (0, √2], got {gamma}")));
        }
        if !(t >= 0.0) {
            return Err(invalid(format!("horizon must be >= 0, got {t}")));
        }
        Ok(Self {
            gamma,
            t,
            critical: (gamma - SQRT_2).abs() <= CRITICAL_TOL,
        })
    }

    pub fn critical(t: f64) -> Result<Self> {
        Self::new(SQRT_2, t)
    }

    /// `√t` at criticality, 1 otherwise.
    pub fn normalization(&self) -> f64 {
        if self.critical {
            self.t.sqrt()
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmcWeights {
    pub masses: Vec<f64>,
}

impl GmcWeights {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

/// `m(t) = √2 t - (3 / 2√2) log t`.
pub fn m_of_t(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("m(t) needs t > 0, got {t}")));
    }
    Ok(SQRT_2 * t - 3.0 / (2.0 * SQRT_2) * t.ln())
}

/// `U(t) = √2 t - log t / (2√2) + (4/√2) log log t` for `t >= e`, `+∞` below.
pub fn u_of_t(t: f64) -> f64 {
    if t < E {
        return f64::INFINITY;
    }
    SQRT_2 * t - t.ln() / (2.0 * SQRT_2) + 4.0 / SQRT_2 * t.ln().ln()
}

/// Masses `norm · exp(γ X_t - γ² t / 2) / N` for field values at the horizon.
pub fn gmc_weights_from_values(values: &[f64], params: &GmcParams) -> Result<GmcWeights> {
    let n = values.len() as f64;
    let norm = params.normalization();
    if norm == 0.0 {
        return Ok(GmcWeights {
            masses: vec![0.0; values.len()],
        });
    }
    let offset = norm.ln() - 0.5 * params.gamma * params.gamma * params.t - n.ln();
    let masses = values
        .iter()
        .map(|&x| (params.gamma * x + offset).min(MAX_EXPONENT).exp())
        .collect::<Vec<_>>();
    if masses.iter().any(|m| !m.is_finite()) {
        return Err(Error::Numeric("non-finite chaos mass".into()));
    }
    Ok(GmcWeights { masses })
}

pub fn gmc_weights(sample: &LayeredFieldSample, params: &GmcParams) -> Result<GmcWeights> {
    if (sample.horizon() - params.t).abs() > 1e-9 * params.t.max(1.0) {
        return Err(invalid(format!(
            "chaos horizon {} does not match sample horizon {}",
            params.t,
            sample.horizon()
        )));
    }
    gmc_weights_from_values(&sample.horizon_values(), params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoodEventParams {
    /// Barrier slack; `f64::INFINITY` disables the event.
    pub a: f64,
    pub delta: f64,
    pub n: u64,
    /// `δ log n`.
    pub r_n: f64,
}

impl GoodEventParams {
    pub fn new(a: f64, delta: f64, n: u64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(invalid(format!("A must be > 0, got {a}")));
        }
        if !(delta > 0.0 && delta < 0.25) {
            return Err(invalid(format!("delta must satisfy 0 < delta < 0.25, got {delta}")));
        }
        if n < 2 {
            return Err(invalid(format!("n must be >= 2, got {n}")));
        }
        Ok(Self {
            a,
            delta,
            n,
            r_n: delta * (n as f64).ln(),
        })
    }

    /// `Δ_n = e n^{-δ}`.
    pub fn delta_n(&self) -> f64 {
        E * (self.n as f64).powf(-self.delta)
    }
}

/// Barrier thresholds for one `(A, r_n)` pair on a given time grid.
#[derive(Debug, Clone)]
pub struct GoodSetBarrier {
    r_level: usize,
    /// Threshold on `X_{r}`; `+∞` when `r` rounds to level 0.
    start: f64,
    /// Threshold on `X^{(r)}` after `m + 1` layers.
    shifted: Vec<f64>,
}

impl GoodSetBarrier {
    pub fn new(levels: &[f64], gp: &GoodEventParams) -> Result<Self> {
        let horizon = levels[levels.len() - 1];
        if gp.r_n > horizon + 1e-12 {
            return Err(invalid(format!(
                "r_n = {} exceeds the horizon {horizon}",
                gp.r_n
            )));
        }
        let tol = 1e-12 * gp.r_n.max(1.0);
        let r_level = levels.iter().rposition(|&l| l <= gp.r_n + tol).unwrap_or(0);
        let r = levels[r_level];
        if gp.r_n - r > MAX_LEVEL_ROUNDING + 1e-12 {
            return Err(invalid(format!(
                "no time level within {MAX_LEVEL_ROUNDING} below r_n = {}",
                gp.r_n
            )));
        }
        let start = if r > 0.0 { m_of_t(r)? + gp.a } else { f64::INFINITY };
        let shifted = levels[r_level + 1..]
            .iter()
            .map(|&l| u_of_t(l - r) + gp.a)
            .collect();
        Ok(Self {
            r_level,
            start,
            shifted,
        })
    }

    pub fn r_level(&self) -> usize {
        self.r_level
    }

    /// Is every threshold infinite?
    pub fn is_vacuous(&self) -> bool {
        self.start == f64::INFINITY && self.shifted.iter().all(|v| *v == f64::INFINITY)
    }

    pub fn mask(&self, sample: &LayeredFieldSample) -> Vec<bool> {
        let n = sample.size();
        let mut mask = vec![true; n];
        if self.is_vacuous() {
            return mask;
        }
        let mut running = sample.cumulative(self.r_level);
        for (ok, x) in mask.iter_mut().zip(&running) {
            *ok = *x <= self.start;
        }
        running.iter_mut().for_each(|v| *v = 0.0);
        for (m, &threshold) in self.shifted.iter().enumerate() {
            let inc = sample.increment(self.r_level + m);
            for ((r, d), ok) in running.iter_mut().zip(inc).zip(mask.iter_mut()) {
                *r += d;
                if *r > threshold {
                    *ok = false;
                }
            }
        }
        mask
    }
}

/// Good points: `X_{r_n} <= m(r_n) + A` and `X^{(r_n)}_s <= U(s) + A` at every
/// grid level `s ∈ (0, t - r_n]`, with `r_n` rounded down to the grid.
pub fn good_set_mask(sample: &LayeredFieldSample, gp: &GoodEventParams) -> Result<Vec<bool>> {
    Ok(GoodSetBarrier::new(sample.times().levels(), gp)?.mask(sample))
}

pub fn good_event(mask: &[bool]) -> bool {
    mask.iter().all(|&b| b)
}

pub fn restricted_measure(w: &GmcWeights, mask: &[bool]) -> Result<GmcWeights> {
    if w.len() != mask.len() {
        return Err(invalid(format!(
            "mask length {} does not match measure length {}",
            mask.len(),
            w.len()
        )));
    }
    Ok(GmcWeights {
        masses: w
            .masses
            .iter()
            .zip(mask)
            .map(|(&m, &ok)| if ok { m } else { 0.0 })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{SpatialGrid, TimeGrid};

    #[test]
    fn m_examples() {
        assert!((m_of_t(1.0).unwrap() - SQRT_2).abs() < 1e-15);
        let m4 = SQRT_2 * 4.0 - 3.0 / (2.0 * SQRT_2) * 4.0f64.ln();
        assert!((m_of_t(4.0).unwrap() - m4).abs() < 1e-15);
        assert!((m4 - 4.18646).abs() < 1e-5);
        assert!((m_of_t(E).unwrap() - 2.78357).abs() < 1e-5);
        assert!(m_of_t(0.0).is_err());
    }

    #[test]
    fn u_examples() {
        assert_eq!(u_of_t(1.0), f64::INFINITY);
        assert!((u_of_t(E) - (SQRT_2 * E - 1.0 / (2.0 * SQRT_2))).abs() < 1e-14);
        assert!((u_of_t(E) - 3.49068).abs() < 1e-5);
        // U(t) - √2 t peaks at log t = 8 with value (4 log 8 - 4)/√2 ≈ 3.05;
        // it is positive for log t in (1.16, 26.1), so U(t) <= √2 t fails there.
        let peak = (4.0 * 8.0f64.ln() - 4.0) / SQRT_2;
        let mut worst = f64::NEG_INFINITY;
        let mut t = E;
        while t < 1e6 {
            worst = worst.max(u_of_t(t) - SQRT_2 * t);
            t *= 1.01;
        }
        assert!(worst > 3.0 && worst <= peak + 1e-12, "{worst}");
        assert!(u_of_t(3.0) <= SQRT_2 * 3.0);
        assert!(u_of_t(10.0) > SQRT_2 * 10.0);
    }

    #[test]
    fn params_validation() {
        assert!(GmcParams::new(1.5, 1.0).is_err());
        assert!(GmcParams::new(0.0, 1.0).is_err());
        assert!(GmcParams::new(SQRT_2 + 1e-13, 1.0).unwrap().critical);
        assert!(!GmcParams::new(1.0, 1.0).unwrap().critical);
        assert!(GoodEventParams::new(1.0, 0.25, 10).is_err());
        assert!(GoodEventParams::new(1.0, 0.2, 1).is_err());
        assert!(GoodEventParams::new(0.0, 0.2, 10).is_err());
    }

    fn zero_sample(size: usize, horizon: f64) -> LayeredFieldSample {
        let tg = TimeGrid::uniform(0.25, horizon).unwrap();
        let l = tg.layer_count();
        LayeredFieldSample::from_increments(tg, size, vec![0.0; l * size]).unwrap()
    }

    #[test]
    fn zero_field_weights() {
        let s = zero_sample(16, 2.0);
        for gamma in [0.5, SQRT_2] {
            let p = GmcParams::new(gamma, 2.0).unwrap();
            let w = gmc_weights(&s, &p).unwrap();
            let expect = p.normalization() * (-gamma * gamma * 2.0 / 2.0).exp() / 16.0;
            assert!(w.masses.iter().all(|m| (m - expect).abs() < 1e-15));
        }
        let p = GmcParams::new(1.0, 3.0).unwrap();
        assert!(gmc_weights(&s, &p).is_err());
    }

    #[test]
    fn zero_field_is_good() {
        let s = zero_sample(16, 8.0);
        let gp = GoodEventParams::new(0.1, 0.2, 256).unwrap();
        assert!(good_event(&good_set_mask(&s, &gp).unwrap()));
        let inf = GoodEventParams::new(f64::INFINITY, 0.2, 256).unwrap();
        assert!(good_event(&good_set_mask(&s, &inf).unwrap()));
    }

    #[test]
    fn good_event_conjunction() {
        assert!(good_event(&[true, true]));
        assert!(!good_event(&[true, false, true]));
    }

    #[test]
    fn barrier_rejects_late_r() {
        let s = zero_sample(16, 1.0);
        let gp = GoodEventParams::new(1.0, 0.24, 1_000_000).unwrap();
        assert!(good_set_mask(&s, &gp).is_err());
    }

    #[test]
    fn restricted_measure_cases() {
        let w = GmcWeights {
            masses: vec![0.1, 0.2, 0.3],
        };
        assert_eq!(restricted_measure(&w, &[true; 3]).unwrap(), w);
        assert_eq!(restricted_measure(&w, &[false; 3]).unwrap().total_mass(), 0.0);
        assert!(restricted_measure(&w, &[true; 2]).is_err());
    }

    #[test]
    fn mask_monotone_in_a() {
        use crate::field::FieldSampler;
        use crate::kernel::ScaleCovariance;
        use crate::rng::StreamKey;
        let g = SpatialGrid::new(4096).unwrap();
        let tg = TimeGrid::uniform(0.25, 8.0).unwrap();
        let s = FieldSampler::new(&ScaleCovariance::triangle(), tg, g).unwrap();
        for rep in 0..4 {
            let f = s.sample(StreamKey::new(99, rep));
            let mut prev: Option<Vec<bool>> = None;
            for a in [0.01, 0.5, 1.0, 2.0, 4.0] {
                let gp = GoodEventParams::new(a, 0.2, 4096).unwrap();
                let m = good_set_mask(&f, &gp).unwrap();
                if let Some(p) = prev {
                    assert!(p.iter().zip(&m).all(|(a, b)| !a || *b));
                }
                prev = Some(m);
            }
        }
    }
}
