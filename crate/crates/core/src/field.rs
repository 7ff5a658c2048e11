//! Layered sampling of the cut-off field on the circle and of two-point
//! paths on the line.
//!
//! The field at level `t_L` is a sum of independent layers; the layer
//! `(t_{j-1}, t_j]` is a stationary Gaussian sequence on the `N`-point
//! circle with covariance `K_{t_j}(d) - K_{t_{j-1}}(d)` at arc distance `d`.
//! Each layer is drawn exactly by diagonalising its circulant covariance
//! with one real inverse FFT.

use std::io::{self, Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner};
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::kernel::ScaleCovariance;
use crate::quad;
use crate::rng::StreamKey;

/// Relative negativity tolerated in a layer spectrum before it is an error.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    levels: Vec<f64>,
}

impl TimeGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(invalid("time grid needs at least two levels"));
        }
        if levels[0] != 0.0 {
            return Err(invalid("time grid must start at 0"));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("time grid must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    /// Levels `0, w, 2w, …` up to `horizon` (a short last layer is kept).
    pub fn uniform(width: f64, horizon: f64) -> Result<Self> {
        if !(width > 0.0) || !(horizon > 0.0) {
            return Err(invalid(format!(
                "uniform time grid needs width > 0 and horizon > 0 (got {width}, {horizon})"
            )));
        }
        let full = (horizon / width + 1e-9).floor() as usize;
        let mut levels: Vec<f64> = (0..=full).map(|i| i as f64 * width).collect();
        let last = *levels.last().unwrap();
        if horizon - last > 1e-9 * horizon.max(1.0) {
            levels.push(horizon);
        } else {
            *levels.last_mut().unwrap() = horizon;
        }
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn horizon(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn layer_count(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn finest_width(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the largest level `<= x`.
    pub fn level_at_or_below(&self, x: f64) -> Option<usize> {
        let tol = 1e-12 * x.abs().max(1.0);
        self.levels.iter().rposition(|&l| l <= x + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialGrid {
    size: usize,
}

impl SpatialGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 || !size.is_power_of_two() {
            return Err(invalid(format!(
                "spatial grid size must be a power of two >= 2, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / self.size as f64
    }

    /// Arc distance of an index offset, in `[0, 1/2]`.
    pub fn gap(&self, offset: usize) -> f64 {
        let k = offset % self.size;
        k.min(self.size - k) as f64 / self.size as f64
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.gap(i.abs_diff(j))
    }
}

/// Eigenvalues of the circulant covariance of layer `(s, t]`, clamped at 0.
pub fn layer_spectrum(
    cov: &ScaleCovariance,
    s: f64,
    t: f64,
    grid: SpatialGrid,
) -> Result<Vec<f64>> {
    let n = grid.size();
    if s == t {
        return Ok(vec![0.0; n]);
    }
    let half = n / 2;
    let mut first_row = vec![0.0; n];
    for (j, c) in first_row.iter_mut().enumerate().take(half + 1) {
        *c = cov.circle_layer(s, t, grid.gap(j))?;
    }
    for j in half + 1..n {
        first_row[j] = first_row[n - j];
    }
    let mut buf: Vec<Complex64> = first_row.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let eig: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let max = eig.iter().copied().fold(0.0, f64::max);
    let (freq, min) = eig
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    if min < -NEGATIVE_EIGEN_TOL * max {
        return Err(Error::NotPositiveDefinite {
            frequency: freq,
            eigenvalue: min,
            max,
        });
    }
    Ok(eig.into_iter().map(|v| v.max(0.0)).collect())
}

/// One joint draw of the layered field, stored as per-layer increments.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredFieldSample {
    times: TimeGrid,
    size: usize,
    /// Row-major `L × N`; row `ℓ` is `X_{t_{ℓ+1}} - X_{t_ℓ}`.
    increments: Vec<f64>,
}

impl LayeredFieldSample {
    pub fn from_increments(times: TimeGrid, size: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != times.layer_count() * size {
            return Err(invalid(format!(
                "expected {} increments, got {}",
                times.layer_count() * size,
                increments.len()
            )));
        }
        Ok(Self {
            times,
            size,
            increments,
        })
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn layer_count(&self) -> usize {
        self.times.layer_count()
    }

    pub fn horizon(&self) -> f64 {
        self.times.horizon()
    }

    pub fn increment(&self, layer: usize) -> &[f64] {
        &self.increments[layer * self.size..(layer + 1) * self.size]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `X_{t_level}` at every grid point.
    pub fn cumulative(&self, level: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for layer in 0..level {
            for (o, d) in out.iter_mut().zip(self.increment(layer)) {
                *o += d;
            }
        }
        out
    }

    pub fn horizon_values(&self) -> Vec<f64> {
        self.cumulative(self.layer_count())
    }

    /// `X^{(r)}_s = X_{r+s} - X_r` with `r = t_{r_level}`.
    pub fn shifted_view(&self, r_level: usize) -> Result<ShiftedView<'_>> {
        if r_level > self.layer_count() {
            return Err(invalid(format!(
                "shift level {r_level} beyond {} layers",
                self.layer_count()
            )));
        }
        Ok(ShiftedView {
            sample: self,
            r_level,
        })
    }

    /// Debug dump: little-endian header followed by the increments, row-major.
    ///
    /// Layout: magic `GMCFLFS1`, `N: u64`, `L: u64`, `L+1` time levels as
    /// `f64`, kernel name length `u64` + UTF-8 bytes, seed `u64`, then the
    /// `L × N` increments as `f64`.
    pub fn write_dump<W: Write>(&self, mut w: W, kernel: &str, seed: u64) -> io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.size as u64).to_le_bytes())?;
        w.write_all(&(self.layer_count() as u64).to_le_bytes())?;
        for l in self.times.levels() {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&(kernel.len() as u64).to_le_bytes())?;
        w.write_all(kernel.as_bytes())?;
        w.write_all(&seed.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`write_dump`](Self::write_dump); returns the sample, kernel name and seed.
    pub fn read_dump<R: Read>(mut r: R) -> io::Result<(Self, String, u64)> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(bad("not a layered field dump"));
        }
        let size = read_u64(&mut r)? as usize;
        let layers = read_u64(&mut r)? as usize;
        let levels = (0..=layers)
            .map(|_| read_f64(&mut r))
            .collect::<io::Result<Vec<_>>>()?;
        let name_len = read_u64(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("kernel name is not UTF-8"))?;
        let seed = read_u64(&mut r)?;
        let increments = (0..size * layers)
            .map(|_| read_f64(&mut r))
            .collect::<io::Result<Vec<_>>>()?;
        let times = TimeGrid::new(levels).map_err(|e| bad(&e.to_string()))?;
        let sample =
            Self::from_increments(times, size, increments).map_err(|e| bad(&e.to_string()))?;
        Ok((sample, name, seed))
    }
}

const DUMP_MAGIC: &[u8; 8] = b"GMCFLFS1";

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Value view of the field restarted at level `r`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedView<'a> {
    sample: &'a LayeredFieldSample,
    r_level: usize,
}

impl ShiftedView<'_> {
    /// Number of levels available after the shift.
    pub fn steps(&self) -> usize {
        self.sample.layer_count() - self.r_level
    }

    /// Elapsed time `t_{r+m} - t_r`.
    pub fn elapsed(&self, m: usize) -> f64 {
        let lv = self.sample.times.levels();
        lv[self.r_level + m] - lv[self.r_level]
    }

    /// `X^{(r)}` after `m` layers, at every grid point.
    pub fn values(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.sample.size];
        for layer in self.r_level..self.r_level + m {
            for (o, d) in out.iter_mut().zip(self.sample.increment(layer)) {
                *o += d;
            }
        }
        out
    }
}

/// Precomputed per-layer spectra; draws any number of replicas.
pub struct FieldSampler {
    cov: ScaleCovariance,
    times: TimeGrid,
    grid: SpatialGrid,
    /// Per layer, `sqrt(λ_k / N)` for `k = 0..=N/2`.
    amplitudes: Vec<Vec<f64>>,
    plan: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for FieldSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldSampler")
            .field("kernel", &self.cov.kernel.name())
            .field("layers", &self.times.layer_count())
            .field("size", &self.grid.size())
            .finish()
    }
}

/// Smallest admissible power-of-two grid for horizon `t`: `1/N <= e^{-t}`.
pub fn required_grid_size(horizon: f64) -> usize {
    let need = horizon.exp().ceil().max(2.0) as usize;
    need.next_power_of_two()
}

impl FieldSampler {
    pub fn new(cov: &ScaleCovariance, times: TimeGrid, grid: SpatialGrid) -> Result<Self> {
        if !(times.finest_width() > 0.0) {
            return Err(invalid("time layers must have positive width"));
        }
        let n = grid.size();
        if (n as f64) < times.horizon().exp() * (1.0 - 1e-12) {
            return Err(Error::GridTooCoarse {
                required: required_grid_size(times.horizon()),
                actual: n,
            });
        }
        let lv = times.levels().to_vec();
        let amplitudes = (0..times.layer_count())
            .into_par_iter()
            .map(|j| {
                let eig = layer_spectrum(cov, lv[j], lv[j + 1], grid)?;
                Ok(eig[..=n / 2]
                    .iter()
                    .map(|&l| (l / n as f64).sqrt())
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let plan = RealFftPlanner::<f64>::new().plan_fft_inverse(n);
        Ok(Self {
            cov: cov.clone(),
            times,
            grid,
            amplitudes,
            plan,
        })
    }

    pub fn covariance(&self) -> &ScaleCovariance {
        &self.cov
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    /// Draw one replica; layer `ℓ` uses stream `key.with_layer(ℓ)`.
    pub fn sample(&self, key: StreamKey) -> LayeredFieldSample {
        let n = self.grid.size();
        let layers = self.times.layer_count();
        let mut increments = vec![0.0; layers * n];
        let mut spectrum = self.plan.make_input_vec();
        let mut scratch = self.plan.make_scratch_vec();
        for (layer, row) in increments.chunks_exact_mut(n).enumerate() {
            let mut rng = key.with_layer(layer as u64).rng();
            self.fill_layer(layer, &mut rng, &mut spectrum);
            self.plan
                .process_with_scratch(&mut spectrum, row, &mut scratch)
                .expect("buffer sizes fixed by the plan");
        }
        LayeredFieldSample {
            times: self.times.clone(),
            size: n,
            increments,
        }
    }

    fn fill_layer<R: Rng>(&self, layer: usize, rng: &mut R, spectrum: &mut [Complex64]) {
        let amp = &self.amplitudes[layer];
        let half = self.grid.size() / 2;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (k, z) in spectrum.iter_mut().enumerate() {
            let re: f64 = rng.sample(StandardNormal);
            if k == 0 || k == half {
                *z = Complex64::new(amp[k] * re, 0.0);
            } else {
                let im: f64 = rng.sample(StandardNormal);
                *z = Complex64::new(amp[k] * re * s, amp[k] * im * s);
            }
        }
    }
}

/// Convenience wrapper around [`FieldSampler`] for a single draw.
pub fn sample_field(
    cov: &ScaleCovariance,
    times: &TimeGrid,
    grid: SpatialGrid,
    key: StreamKey,
) -> Result<LayeredFieldSample> {
    Ok(FieldSampler::new(cov, times.clone(), grid)?.sample(key))
}

/// Cumulative paths `(X_s(0), X_s(Δ))` on `s = 0, dt, …, M dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointPathSample {
    pub gap: f64,
    pub dt: f64,
    pub paths: [Vec<f64>; 2],
}

/// Lower-triangular factor of one step's 2×2 increment covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFactor {
    /// Cross-covariance of the step, `K_{s+dt}(Δ) - K_s(Δ)`.
    pub cross: f64,
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

/// Stepwise exact sampler of the two-point process at fixed gap.
#[derive(Debug, Clone)]
pub struct TwoPointSampler {
    gap: f64,
    dt: f64,
    steps: Vec<StepFactor>,
}

impl TwoPointSampler {
    /// Gaps are on the line here: any `Δ > 0` is accepted.
    pub fn new(cov: &ScaleCovariance, gap: f64, dt: f64, horizon: f64) -> Result<Self> {
        if !(gap > 0.0) {
            return Err(invalid(format!("two-point gap must be > 0, got {gap}")));
        }
        if !(dt > 0.0 && dt <= 0.01) {
            return Err(invalid(format!("two-point step must be in (0, 0.01], got {dt}")));
        }
        let m = (horizon / dt).round();
        if !(horizon > 0.0) || (m * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(invalid(format!(
                "horizon {horizon} is not a positive multiple of dt = {dt}"
            )));
        }
        let m = m as usize;
        let mut steps = Vec::with_capacity(m);
        for i in 0..m {
            let s = i as f64 * dt;
            let cross = cov.layer(s, s + dt, gap)?;
            if cross.abs() > dt * (1.0 + 1e-12) {
                return Err(Error::InvalidCovariance(format!(
                    "step cross-covariance {cross} exceeds step variance {dt}"
                )));
            }
            let l11 = dt.sqrt();
            let l21 = cross / l11;
            let l22 = (dt - l21 * l21).max(0.0).sqrt();
            steps.push(StepFactor {
                cross,
                l11,
                l21,
                l22,
            });
        }
        Ok(Self { gap, dt, steps })
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> &[StepFactor] {
        &self.steps
    }

    /// `K_T(Δ)` of the discretised process (sum of the step cross terms).
    pub fn total_cross(&self) -> f64 {
        self.steps.iter().map(|s| s.cross).sum()
    }

    pub fn sample(&self, key: StreamKey) -> TwoPointPathSample {
        let m = self.steps.len();
        let mut a = Vec::with_capacity(m + 1);
        let mut b = Vec::with_capacity(m + 1);
        a.push(0.0);
        b.push(0.0);
        self.walk(key, 0.0, |_, x, y| {
            a.push(x);
            b.push(y);
            true
        });
        TwoPointPathSample {
            gap: self.gap,
            dt: self.dt,
            paths: [a, b],
        }
    }

    /// Streams the two paths step by step, calling `visit(i, x, y)` after
    /// step `i` (1-based); stops early when `visit` returns false.
    ///
    /// `tilt = λ` adds the drift `λ (dt + cross)` to both coordinates, the
    /// law of the paths under the change of measure with density
    /// `∝ e^{λ (X_T(0) + X_T(Δ))}`. With `tilt = 0` the draws coincide with
    /// [`TwoPointSampler::sample`]. Returns true if all steps were visited.
    pub fn walk(&self, key: StreamKey, tilt: f64, mut visit: impl FnMut(usize, f64, f64) -> bool) -> bool {
        let mut rng = key.rng();
        let (mut x, mut y) = (0.0, 0.0);
        for (i, f) in self.steps.iter().enumerate() {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let drift = tilt * (self.dt + f.cross);
            x += f.l11 * z1 + drift;
            y += f.l21 * z1 + f.l22 * z2 + drift;
            if !visit(i + 1, x, y) {
                return false;
            }
        }
        true
    }
}

pub fn sample_two_point(
    cov: &ScaleCovariance,
    gap: f64,
    dt: f64,
    horizon: f64,
    key: StreamKey,
) -> Result<TwoPointPathSample> {
    Ok(TwoPointSampler::new(cov, gap, dt, horizon)?.sample(key))
}

/// Variance of the part of `X_s(0)` independent of the whole path at `Δ`:
/// `s - ∫_0^s (∂_u K_u(Δ))² du`, with `∂_u K_u(Δ) = k(e^u Δ)`.
pub fn residual_variance(cov: &ScaleCovariance, gap: f64, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(invalid(format!("residual variance needs s >= 0, got {s}")));
    }
    let gap = gap.abs();
    if s == 0.0 {
        return Ok(0.0);
    }
    if gap == 0.0 {
        return Ok(0.0);
    }
    let hi = s.min(-gap.ln());
    let explained = if hi <= 0.0 {
        0.0
    } else {
        let f = |u: f64| {
            let r = cov.level_rate(u, gap);
            r * r
        };
        let knots = [0.5f64]
            .iter()
            .map(|x| (x / gap).ln())
            .collect::<Vec<_>>();
        quad::integrate_pieces(&f, &quad::breakpoints(0.0, hi, &knots), cov.quadrature_tol)?
    };
    let v = s - explained;
    if v < -cov.quadrature_tol * 10.0 {
        return Err(Error::Numeric(format!("negative residual variance {v}")));
    }
    Ok(v.max(0.0))
}
