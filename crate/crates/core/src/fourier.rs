//! Fourier coefficients of discretised measures and the near/far split of
//! their squared modulus.
//!
//! Convention: `c_n = Σ_i e^{+2πi n θ_i} m_i` with `θ_i = i / N`, i.e. the
//! true Fourier coefficients of a 1-periodic measure.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gmc::{restricted_measure, GmcParams, GmcWeights, GoodEventParams};
use crate::kernel::ScaleCovariance;
use crate::quad;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients {
    /// `c_0 ..= c_{n_max}`.
    pub values: Vec<Complex64>,
}

impl FourierCoefficients {
    pub fn get(&self, n: usize) -> Complex64 {
        self.values[n]
    }
}

/// Near (II) / far (I) decomposition of `|c_n|²` of a restricted measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionSplit {
    /// `e n^{-δ}`.
    pub delta_n: f64,
    /// Pairs at circle distance in `[Δ_n, 1/2]`.
    pub c_i: Complex64Ser,
    /// Pairs at circle distance in `[0, Δ_n)`.
    pub c_ii: Complex64Ser,
}

/// Serializable complex number (`[re, im]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Complex64Ser(pub f64, pub f64);

impl From<Complex64> for Complex64Ser {
    fn from(z: Complex64) -> Self {
        Complex64Ser(z.re, z.im)
    }
}

impl From<Complex64Ser> for Complex64 {
    fn from(z: Complex64Ser) -> Self {
        Complex64::new(z.0, z.1)
    }
}

impl RegionSplit {
    pub fn total(&self) -> Complex64 {
        Complex64::from(self.c_i) + Complex64::from(self.c_ii)
    }
}

/// FFT plans for one grid size.
pub struct FourierEngine {
    size: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for FourierEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierEngine").field("size", &self.size).finish()
    }
}

impl FourierEngine {
    pub fn new(size: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `c_0 ..= c_{N/2}` of the given masses.
    pub fn spectrum(&self, masses: &[f64]) -> Vec<Complex64> {
        assert_eq!(masses.len(), self.size);
        let mut input = masses.to_vec();
        let mut out = self.forward.make_output_vec();
        self.forward
            .process(&mut input, &mut out)
            .expect("buffer sizes fixed by the plan");
        // the forward transform uses e^{-2πi…}
        out.iter_mut().for_each(|z| *z = z.conj());
        out
    }

    pub fn coefficients(&self, w: &GmcWeights, n_max: usize) -> Result<FourierCoefficients> {
        if w.len() != self.size {
            return Err(invalid(format!(
                "measure has {} cells, engine expects {}",
                w.len(),
                self.size
            )));
        }
        if n_max >= self.size / 2 {
            return Err(Error::Aliasing {
                n_max,
                grid: self.size,
            });
        }
        let mut values = self.spectrum(&w.masses);
        values.truncate(n_max + 1);
        Ok(FourierCoefficients { values })
    }

    /// Circular autocorrelation `R(g) = Σ_i m_i m_{i+g}`.
    pub fn autocorrelation(&self, masses: &[f64]) -> Vec<f64> {
        let sp = self.spectrum(masses);
        let mut power: Vec<Complex64> = sp
            .iter()
            .map(|z| Complex64::new(z.norm_sqr() / self.size as f64, 0.0))
            .collect();
        let mut out = self.inverse.make_output_vec();
        self.inverse
            .process(&mut power, &mut out)
            .expect("buffer sizes fixed by the plan");
        out
    }

    /// Sum of `e^{2πi n g / N} R(g)` over offsets whose circle distance
    /// passes `keep`.
    pub fn windowed_sum(&self, autocorr: &[f64], n: u64, keep: impl Fn(f64) -> bool) -> Complex64 {
        let size = self.size;
        let mut acc = Complex64::new(0.0, 0.0);
        let nm = (n % size as u64) as usize;
        for (g, &r) in autocorr.iter().enumerate() {
            let k = g.min(size - g);
            if !keep(k as f64 / size as f64) {
                continue;
            }
            let phase = 2.0 * PI * ((nm * g) % size) as f64 / size as f64;
            acc += Complex64::new(phase.cos() * r, phase.sin() * r);
        }
        acc
    }

    /// Split a precomputed autocorrelation at `Δ_n`.
    pub fn split(&self, autocorr: &[f64], n: u64, delta_n: f64) -> RegionSplit {
        let c_i = self.windowed_sum(autocorr, n, |d| d >= delta_n);
        let c_ii = self.windowed_sum(autocorr, n, |d| d < delta_n);
        RegionSplit {
            delta_n,
            c_i: c_i.into(),
            c_ii: c_ii.into(),
        }
    }
}

pub fn fourier_coeffs(w: &GmcWeights, n_max: usize) -> Result<FourierCoefficients> {
    FourierEngine::new(w.len()).coefficients(w, n_max)
}

/// `(C_I, C_II)` for the measure restricted to `mask`, via one
/// autocorrelation (O(N log N)) and a windowed phase sum per region.
pub fn region_contributions(
    w: &GmcWeights,
    mask: &[bool],
    n: u64,
    gp: &GoodEventParams,
) -> Result<RegionSplit> {
    let restricted = restricted_measure(w, mask)?;
    let engine = FourierEngine::new(w.len());
    let r = engine.autocorrelation(&restricted.masses);
    Ok(engine.split(&r, n, gp.delta_n()))
}

/// `E|c_{n,t}|²` with no good event:
/// `norm² ∫_0^1 cos(2πnΔ) e^{γ² K_t(d(Δ))} dΔ`.
pub fn exact_second_moment(cov: &ScaleCovariance, params: &GmcParams, n: u64) -> Result<f64> {
    let norm2 = params.normalization().powi(2);
    if norm2 == 0.0 {
        return Ok(0.0);
    }
    let g2 = params.gamma * params.gamma;
    let t = params.t;
    let mut err = None;
    let f = |d: f64| match cov.circle_eval(t, d) {
        Ok(k) => (2.0 * PI * n as f64 * d).cos() * (g2 * k).exp(),
        Err(e) => {
            if err.is_none() {
                err = Some(e);
            }
            0.0
        }
    };
    // Kinks of d ↦ K_t(d) and the zeros of the cosine.
    let mut interior = vec![(-t).exp(), 0.5 * (-t).exp()];
    let halves = 2 * n as usize;
    interior.extend((1..halves).map(|j| j as f64 / (2.0 * halves as f64)));
    let pts = quad::breakpoints(0.0, 0.5, &interior);
    let tol = 1e-13 * (g2 * t).exp();
    let cell = std::cell::RefCell::new(f);
    let value = quad::integrate_pieces(&|d| (cell.borrow_mut())(d), &pts, tol)?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(2.0 * norm2 * value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(masses: &[f64], n: usize) -> Complex64 {
        let size = masses.len();
        masses
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let ph = 2.0 * PI * ((n * i) % size) as f64 / size as f64;
                Complex64::new(ph.cos(), ph.sin()) * m
            })
            .sum()
    }

    fn pseudo_masses(size: usize) -> Vec<f64> {
        (0..size)
            .map(|i| {
                let x = (i as f64 * 0.618_033_988_75).fract();
                (3.0 * x).exp() / size as f64
            })
            .collect()
    }

    #[test]
    fn uniform_measure() {
        let w = GmcWeights {
            masses: vec![1.0 / 64.0; 64],
        };
        let c = fourier_coeffs(&w, 31).unwrap();
        assert!((c.get(0).re - 1.0).abs() < 1e-14);
        for n in 1..=31 {
            assert!(c.get(n).norm() < 1e-14);
        }
        assert!(matches!(
            fourier_coeffs(&w, 32),
            Err(Error::Aliasing { .. })
        ));
    }

    #[test]
    fn point_mass() {
        let mut m = vec![0.0; 64];
        m[0] = 2.5;
        let c = fourier_coeffs(&GmcWeights { masses: m }, 31).unwrap();
        for n in 0..=31 {
            assert!((c.get(n).norm() - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_naive_summation_and_sign_convention() {
        let m = pseudo_masses(256);
        let c = fourier_coeffs(&GmcWeights { masses: m.clone() }, 100).unwrap();
        for n in [1, 2, 7, 50, 100] {
            let d = naive(&m, n);
            assert!((c.get(n) - d).norm() <= 1e-12 * d.norm().max(1e-300), "{n}");
        }
        // a mass at θ = 1/4 has c_1 = +i
        let mut q = vec![0.0; 16];
        q[4] = 1.0;
        let c = fourier_coeffs(&GmcWeights { masses: q }, 1).unwrap();
        assert!((c.get(1) - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn parseval_on_the_grid() {
        let m = pseudo_masses(512);
        let engine = FourierEngine::new(512);
        let sp = engine.spectrum(&m);
        // c_{-n} = conj(c_n); sum over |n| < N/2 plus the Nyquist term
        let mut total = sp[0].norm_sqr() + sp[256].norm_sqr();
        total += 2.0 * sp[1..256].iter().map(|z| z.norm_sqr()).sum::<f64>();
        let direct = 512.0 * m.iter().map(|x| x * x).sum::<f64>();
        assert!((total - direct).abs() <= 1e-10 * direct);
    }

    #[test]
    fn regions_partition_modulus_squared() {
        let m = pseudo_masses(4096);
        let w = GmcWeights { masses: m };
        let mask: Vec<bool> = (0..4096).map(|i| i % 7 != 3).collect();
        let restricted = restricted_measure(&w, &mask).unwrap();
        for n in [2u64, 16, 100, 1000] {
            let gp = GoodEventParams::new(1.0, 0.2, n).unwrap();
            let split = region_contributions(&w, &mask, n, &gp).unwrap();
            let direct = naive(&restricted.masses, n as usize).norm_sqr();
            assert!((split.total().re - direct).abs() <= 1e-9 * direct, "{n}");
            assert!(split.total().im.abs() <= 1e-9 * direct);
        }
    }

    #[test]
    fn regions_edge_cases() {
        let w = GmcWeights {
            masses: pseudo_masses(128),
        };
        let gp = GoodEventParams::new(1.0, 0.2, 2).unwrap();
        let none = region_contributions(&w, &[false; 128], 2, &gp).unwrap();
        assert_eq!(none.total(), Complex64::new(0.0, 0.0));
        // Δ_2 = e 2^{-0.2} > 1/2: region I is empty
        assert!(gp.delta_n() > 0.5);
        let all = region_contributions(&w, &[true; 128], 2, &gp).unwrap();
        assert_eq!(Complex64::from(all.c_i), Complex64::new(0.0, 0.0));
        let c = naive(&w.masses, 2).norm_sqr();
        assert!((Complex64::from(all.c_ii).re - c).abs() < 1e-12 * c);
    }

    #[test]
    fn indicator_inside_is_dominated() {
        // 1_E |c_n(μ)|² <= |c_n(μ̃)|² holds pathwise.
        let m = pseudo_masses(256);
        let w = GmcWeights { masses: m };
        for mask in [vec![true; 256], (0..256).map(|i| i % 5 != 0).collect::<Vec<_>>()] {
            let all_good = mask.iter().all(|&b| b);
            let r = restricted_measure(&w, &mask).unwrap();
            for n in [1usize, 9, 60] {
                let lhs = if all_good { naive(&w.masses, n).norm_sqr() } else { 0.0 };
                let rhs = naive(&r.masses, n).norm_sqr();
                assert!(lhs <= rhs + 1e-15);
            }
        }
    }

    #[test]
    fn exact_second_moment_cases() {
        let cov = ScaleCovariance::triangle();
        let crit0 = GmcParams::critical(0.0).unwrap();
        assert_eq!(exact_second_moment(&cov, &crit0, 5).unwrap(), 0.0);
        let sub = GmcParams::new(0.8, 3.0).unwrap();
        let m0 = exact_second_moment(&cov, &sub, 0).unwrap();
        assert!(m0 >= 1.0);
        // trapezoid oracle on a fine grid
        let fine = 2_000_000;
        let h = 1.0 / fine as f64;
        let mut s = 0.0;
        for i in 0..fine {
            let d = (i as f64 * h).min(1.0 - i as f64 * h);
            s += (0.64 * cov.eval(3.0, d).unwrap()).exp();
        }
        s *= h;
        assert!((m0 - s).abs() < 1e-6 * s, "{m0} vs {s}");
    }
}
