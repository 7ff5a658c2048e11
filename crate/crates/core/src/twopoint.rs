//! Two-point quantities: branching time and slope, the Girsanov shift, the
//! bivariate barrier probability and the auxiliary function
//! `F(Δ) = t e^{-2t} E[1{0, Δ good} e^{√2 (X_t(0) + X_t(Δ))}]`.

use std::f64::consts::{E, SQRT_2};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::TwoPointSampler;
use crate::gmc::{m_of_t, u_of_t, GoodEventParams};
use crate::kernel::ScaleCovariance;
use crate::quad;
use crate::rng::StreamKey;
use crate::stats::{fit_log_slope, norm_cdf, norm_pdf};

/// Fewer good tilted paths than this flags the estimate as unstable.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 100.0;

/// `t ∧ (log Δ^{-1} ∨ r_n)`.
pub fn branching_time(t: f64, gp: &GoodEventParams, gap: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(invalid(format!("branching time needs Δ > 0, got {gap}")));
    }
    if !(t >= gp.r_n) {
        return Err(invalid(format!("branching time needs t >= r_n = {}, got {t}", gp.r_n)));
    }
    Ok(t.min((-gap.ln()).max(gp.r_n)))
}

/// `α = √2 - log g / (2√2 g)` with `g = r_Δ - r_n >= e`.
pub fn slope(r_delta: f64, r_n: f64) -> Result<f64> {
    let g = r_delta - r_n;
    if !(g >= E) {
        return Err(Error::UndefinedSlope { gap: g });
    }
    Ok(SQRT_2 - g.ln() / (2.0 * SQRT_2 * g))
}

/// Mean of `X_{r_n}(θ_1)` under the tilt by `e^{√2 (X_t(θ_1) + X_t(θ_2))}`.
pub fn girsanov_shift(cov: &ScaleCovariance, r_n: f64, gap: f64) -> Result<f64> {
    Ok(SQRT_2 * (r_n + cov.eval(r_n, gap)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchingContext {
    pub gp: GoodEventParams,
    pub t: f64,
    pub gap: f64,
    pub r_delta: f64,
    /// Defined when `r_Δ - r_n >= e`.
    pub alpha: Option<f64>,
}

impl BranchingContext {
    pub fn new(gp: GoodEventParams, t: f64, gap: f64) -> Result<Self> {
        let r_delta = branching_time(t, &gp, gap)?;
        let alpha = slope(r_delta, gp.r_n).ok();
        Ok(Self {
            gp,
            t,
            gap,
            r_delta,
            alpha,
        })
    }

    pub fn separation(&self) -> f64 {
        self.r_delta - self.gp.r_n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FBoundParams {
    pub c: f64,
}

impl FBoundParams {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("bound constant must be finite and > 0, got {c}")));
        }
        Ok(Self { c })
    }
}

/// `log(g)^5 / g² ∧ 1` with `log` read as `log(g ∨ e)`: equal to 1 for
/// `g <= 1`, `g^{-2}` on `(1, e)` and the literal expression from `e` on,
/// continuous throughout.
pub fn separation_factor(g: f64) -> f64 {
    if g <= 0.0 {
        return 1.0;
    }
    (g.max(E).ln().powi(5) / (g * g)).min(1.0)
}

/// `C r_n^{-2} · t / (t - r_Δ + 1) · separation_factor · Δ^{-1}`.
pub fn f_bound(ctx: &BranchingContext, fb: &FBoundParams) -> Result<f64> {
    let lo = (-ctx.t).exp();
    let hi = ctx.gp.delta_n();
    let slack = 1e-12;
    if !(ctx.gap >= lo * (1.0 - slack) && ctx.gap <= hi * (1.0 + slack)) {
        return Err(invalid(format!(
            "F bound needs Δ in [e^-t, Δ_n] = [{lo:e}, {hi}], got {}",
            ctx.gap
        )));
    }
    let r_n = ctx.gp.r_n;
    Ok(fb.c / (r_n * r_n) * ctx.t / (ctx.t - ctx.r_delta + 1.0)
        * separation_factor(ctx.separation())
        / ctx.gap)
}

/// `P(X_1 <= H, X_2 <= H)` for a centred pair with variance `r_n` and
/// covariance `K_{r_n}(Δ)`, `H = -√2 K - (3 / 2√2) log r_n + A`.
pub fn q_indicator_prob(cov: &ScaleCovariance, gp: &GoodEventParams, gap: f64) -> Result<f64> {
    let r_n = gp.r_n;
    if !(r_n >= 1.0) {
        return Err(invalid(format!("barrier probability needs r_n >= 1, got {r_n}")));
    }
    let k = cov.eval(r_n, gap)?;
    let h = -SQRT_2 * k - 3.0 / (2.0 * SQRT_2) * r_n.ln() + gp.a;
    bivariate_below(h, k, r_n)
}

/// `P(X_1 <= h, X_2 <= h)` for variances `var` and covariance `k`.
pub fn bivariate_below(h: f64, k: f64, var: f64) -> Result<f64> {
    if k.abs() > var * (1.0 + 1e-12) {
        return Err(Error::InvalidCovariance(format!(
            "|covariance| {k} exceeds variance {var}"
        )));
    }
    let hs = h / var.sqrt();
    if hs == f64::INFINITY {
        return Ok(1.0);
    }
    let rho = (k / var).clamp(-1.0, 1.0);
    let single = norm_cdf(hs);
    let s2 = 1.0 - rho * rho;
    if s2 < 1e-14 {
        return Ok(if rho > 0.0 {
            single
        } else {
            (2.0 * single - 1.0).max(0.0)
        });
    }
    if rho == 0.0 {
        return Ok(single * single);
    }
    let sd = s2.sqrt();
    let f = |z: f64| norm_pdf(z) * norm_cdf((hs - rho * z) / sd);
    let hi = hs.min(40.0);
    let lo = hs.min(0.0) - 40.0;
    let tol = (1e-12 * single * single).max(1e-300);
    let pts = quad::breakpoints(lo, hi, &[hs.min(0.0) - 8.0, hs.min(0.0) - 4.0]);
    Ok(quad::integrate_pieces(&f, &pts, tol)?.clamp(0.0, 1.0))
}

/// How the auxiliary function is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Paths under the tilted law, constant analytic weight `t e^{2 K_t(Δ)}`.
    Tilted,
    /// Plain paths, integrand evaluated directly. Only usable at small `t`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FEstimate {
    pub gap: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Number of good paths (tilted) or the Kish effective sample size.
    pub effective_samples: f64,
    pub unstable: bool,
}

/// Good-set check of the discretised two-point process at both points.
#[derive(Debug, Clone)]
struct StepBarrier {
    r_step: usize,
    start: f64,
    /// Threshold on `X_{r + j dt} - X_r`, `j = 1, 2, …`.
    after: Vec<f64>,
}

impl StepBarrier {
    fn new(gp: &GoodEventParams, dt: f64, steps: usize) -> Result<Self> {
        let r_step = ((gp.r_n / dt) * (1.0 + 1e-12)).floor() as usize;
        if r_step > steps {
            return Err(invalid(format!("r_n = {} lies beyond the horizon", gp.r_n)));
        }
        let r = r_step as f64 * dt;
        let start = if r_step == 0 { f64::INFINITY } else { m_of_t(r)? + gp.a };
        let after = (1..=steps - r_step)
            .map(|j| u_of_t(j as f64 * dt) + gp.a)
            .collect();
        Ok(Self { r_step, start, after })
    }
}

/// Monte Carlo estimate of `F(Δ)` for the two-point process at gap `Δ`.
pub struct FEstimator {
    sampler: TwoPointSampler,
    barrier: StepBarrier,
    t: f64,
    log_weight: f64,
}

impl FEstimator {
    pub fn new(cov: &ScaleCovariance, gp: &GoodEventParams, t: f64, gap: f64, dt: f64) -> Result<Self> {
        if !(t >= gp.r_n + 1.0) {
            return Err(invalid(format!("F needs t >= r_n + 1 = {}, got {t}", gp.r_n + 1.0)));
        }
        let sampler = TwoPointSampler::new(cov, gap, dt, t)?;
        let barrier = StepBarrier::new(gp, dt, sampler.steps().len())?;
        let log_weight = t.ln() + 2.0 * sampler.total_cross();
        Ok(Self {
            sampler,
            barrier,
            t,
            log_weight,
        })
    }

    /// Whether both points of the path drawn from `key` are good; under the
    /// tilted law when `tilt` is set. Returns the endpoint values as well.
    fn run(&self, key: StreamKey, tilt: f64) -> (bool, f64, f64) {
        let b = &self.barrier;
        let (mut xr, mut yr) = (0.0, 0.0);
        let (mut xe, mut ye) = (0.0, 0.0);
        let good = self.sampler.walk(key, tilt, |i, x, y| {
            xe = x;
            ye = y;
            if i < b.r_step {
                return true;
            }
            if i == b.r_step {
                xr = x;
                yr = y;
                return x <= b.start && y <= b.start;
            }
            let th = b.after[i - b.r_step - 1];
            x - xr <= th && y - yr <= th
        });
        (good, xe, ye)
    }

    pub fn estimate(&self, replicas: u64, seed: u64, sampling: Sampling) -> FEstimate {
        let gap = self.sampler.gap();
        match sampling {
            Sampling::Tilted => {
                let good: u64 = (0..replicas)
                    .into_par_iter()
                    .map(|r| self.run(StreamKey::new(seed, r), SQRT_2).0 as u64)
                    .sum();
                let p = good as f64 / replicas as f64;
                let w = self.log_weight.exp();
                let se = (p * (1.0 - p) / (replicas as f64 - 1.0).max(1.0)).sqrt();
                FEstimate {
                    gap,
                    estimate: w * p,
                    stderr: w * se,
                    effective_samples: good as f64,
                    unstable: (good as f64) < MIN_EFFECTIVE_SAMPLES,
                }
            }
            Sampling::Plain => {
                let t = self.t;
                let vals: Vec<f64> = (0..replicas)
                    .into_par_iter()
                    .map(|r| {
                        let (good, x, y) = self.run(StreamKey::new(seed, r), 0.0);
                        if good {
                            (t.ln() - 2.0 * t + SQRT_2 * (x + y)).exp()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let (mean, se) = crate::stats::mean_stderr(&vals);
                let s1: f64 = vals.iter().sum();
                let s2: f64 = vals.iter().map(|v| v * v).sum();
                let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
                FEstimate {
                    gap,
                    estimate: mean,
                    stderr: se,
                    effective_samples: ess,
                    unstable: ess < MIN_EFFECTIVE_SAMPLES,
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_f(
    cov: &ScaleCovariance,
    gp: &GoodEventParams,
    t: f64,
    gap: f64,
    dt: f64,
    replicas: u64,
    seed: u64,
    sampling: Sampling,
) -> Result<FEstimate> {
    if replicas < 2 {
        return Err(invalid("F estimate needs at least 2 replicas"));
    }
    Ok(FEstimator::new(cov, gp, t, gap, dt)?.estimate(replicas, seed, sampling))
}

/// `count` log-spaced gaps from `lo` to `hi`, endpoints included.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return Err(invalid(format!("log grid needs 0 < lo < hi and count >= 2, got ({lo}, {hi}, {count})")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

/// One gap of a bound sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub gap: f64,
    pub r_delta: f64,
    pub separation: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub effective_samples: f64,
    pub unstable: bool,
    /// Bound with `C = 1`.
    pub shape: f64,
}

impl SweepRow {
    pub fn bound(&self, c: f64) -> f64 {
        c * self.shape
    }

    pub fn covered(&self, c: f64) -> bool {
        self.estimate <= self.bound(c) + 4.0 * self.stderr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSettings {
    pub t: f64,
    pub dt: f64,
    pub replicas: u64,
    pub seed: u64,
}

pub fn sweep(
    cov: &ScaleCovariance,
    gp: &GoodEventParams,
    gaps: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let unit = FBoundParams::new(1.0)?;
    gaps.iter()
        .map(|&gap| {
            let ctx = BranchingContext::new(*gp, settings.t, gap)?;
            let shape = f_bound(&ctx, &unit)?;
            let est = estimate_f(
                cov,
                gp,
                settings.t,
                gap,
                settings.dt,
                settings.replicas,
                settings.seed,
                Sampling::Tilted,
            )?;
            Ok(SweepRow {
                gap,
                r_delta: ctx.r_delta,
                separation: ctx.separation(),
                estimate: est.estimate,
                stderr: est.stderr,
                effective_samples: est.effective_samples,
                unstable: est.unstable,
                shape,
            })
        })
        .collect()
}

/// `C = max estimate / shape` over a pilot sweep.
pub fn calibrate_c(pilot: &[SweepRow]) -> Result<FBoundParams> {
    let c = pilot
        .iter()
        .map(|r| r.estimate / r.shape)
        .fold(0.0, f64::max);
    if !(c > 0.0) {
        return Err(Error::Numeric("pilot sweep found no good paths; C is undetermined".into()));
    }
    FBoundParams::new(c)
}

/// Slope of `log(Δ F)` against `log(r_Δ - r_n)` over rows whose separation
/// lies in `[lo, hi]`. Returns the slope, its standard error and the number
/// of rows used.
pub fn decay_slope(rows: &[SweepRow], lo: f64, hi: f64) -> Result<(f64, f64, usize)> {
    let used: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.separation >= lo && r.separation <= hi && r.estimate > 0.0)
        .collect();
    let xs: Vec<f64> = used.iter().map(|r| r.separation.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|r| (r.gap * r.estimate).ln()).collect();
    let (b, se) = fit_log_slope(&xs, &ys)?;
    Ok((b, se, used.len()))
}

/// Trapezoid rule for `∫ F dΔ = ∫ Δ F d(log Δ)` over the sweep gaps.
pub fn integrated_f(rows: &[SweepRow]) -> f64 {
    rows.windows(2)
        .map(|w| {
            let h = w[1].gap.ln() - w[0].gap.ln();
            0.5 * h * (w[0].gap * w[0].estimate + w[1].gap * w[1].estimate)
        })
        .sum()
}

/// Admissible range of the decay slope of `Δ F(Δ)` in the separation.
pub const SLOPE_RANGE: (f64, f64) = (-2.6, -1.6);

/// Offset applied to the seed of the pilot sweep so that calibration and
/// verification use independent paths.
pub const PILOT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Full bound experiment: pilot calibration of `C`, sweep, coverage and
/// slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FBoundSweepConfig {
    pub t: f64,
    pub n: u64,
    pub delta: f64,
    pub a: f64,
    pub gaps: usize,
    pub dt: f64,
    pub replicas: u64,
    pub pilot_replicas: u64,
    /// Every `pilot_stride`-th gap (plus both endpoints) enters the pilot.
    pub pilot_stride: usize,
    /// Fixed `C`; calibrated by the pilot when absent.
    pub c: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FBoundReport {
    pub c: f64,
    pub calibrated: bool,
    pub r_n: f64,
    pub delta_n: f64,
    pub pilot: Vec<SweepRow>,
    pub rows: Vec<SweepRow>,
    pub covered: Vec<bool>,
    /// Separation window `[e, t/2]` used for the slope.
    pub slope_window: (f64, f64),
    /// `(slope, stderr, points)`, absent when fewer than 3 gaps qualify.
    pub slope: Option<(f64, f64, usize)>,
    /// Same fit applied to the bound itself, for reference.
    pub shape_slope: Option<(f64, f64, usize)>,
    pub integrated: f64,
}

impl FBoundReport {
    pub fn coverage_pass(&self) -> bool {
        self.covered.iter().all(|&c| c)
    }

    pub fn slope_pass(&self) -> bool {
        self.slope
            .is_some_and(|(b, _, _)| b >= SLOPE_RANGE.0 && b <= SLOPE_RANGE.1)
    }
}

pub fn run_fbound_sweep(cov: &ScaleCovariance, cfg: &FBoundSweepConfig) -> Result<FBoundReport> {
    let gp = GoodEventParams::new(cfg.a, cfg.delta, cfg.n)?;
    if cfg.pilot_stride == 0 {
        return Err(invalid("pilot_stride must be >= 1"));
    }
    let gaps = log_spaced((-cfg.t).exp(), gp.delta_n(), cfg.gaps)?;
    let settings = SweepSettings {
        t: cfg.t,
        dt: cfg.dt,
        replicas: cfg.replicas,
        seed: cfg.seed,
    };
    let (c, calibrated, pilot) = match cfg.c {
        Some(c) => (FBoundParams::new(c)?.c, false, Vec::new()),
        None => {
            let mut pilot_gaps: Vec<f64> = gaps.iter().copied().step_by(cfg.pilot_stride).collect();
            if pilot_gaps.last() != gaps.last() {
                pilot_gaps.push(*gaps.last().unwrap());
            }
            let pilot_settings = SweepSettings {
                replicas: cfg.pilot_replicas,
                seed: cfg.seed.wrapping_add(PILOT_SEED_OFFSET),
                ..settings
            };
            let pilot = sweep(cov, &gp, &pilot_gaps, &pilot_settings)?;
            (calibrate_c(&pilot)?.c, true, pilot)
        }
    };
    let rows = sweep(cov, &gp, &gaps, &settings)?;
    let covered = rows.iter().map(|r| r.covered(c)).collect();
    let slope_window = (E, cfg.t / 2.0);
    let slope = decay_slope(&rows, slope_window.0, slope_window.1).ok();
    let as_shape: Vec<SweepRow> = rows
        .iter()
        .map(|r| SweepRow {
            estimate: r.shape,
            ..*r
        })
        .collect();
    let shape_slope = decay_slope(&as_shape, slope_window.0, slope_window.1).ok();
    Ok(FBoundReport {
        c,
        calibrated,
        r_n: gp.r_n,
        delta_n: gp.delta_n(),
        pilot,
        integrated: integrated_f(&rows),
        rows,
        covered,
        slope_window,
        slope,
        shape_slope,
    })
}
