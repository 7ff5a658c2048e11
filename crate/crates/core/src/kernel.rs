//! Seed kernels and the scale covariance built from them.
//!
//! For a seed `k` (even, `k(0) = 1`, supported in `[-1, 1]`) the covariance
//! of the cut-off field at level `t` and gap `Δ` is
//!
//! ```text
//! K_t(Δ) = ∫_1^{e^t} k(u Δ) / u du = ∫_0^t k(e^v Δ) dv
//! ```
//!
//! The second form (log-scale variable) is what the quadrature integrates:
//! the integrand is bounded and its kinks sit at `v = log(x_knot / Δ)`.

use std::f64::consts::E;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::{self, DEFAULT_TOL};

/// Extension point for seeds beyond the two built-ins.
///
/// Implementors promise the same contract as the built-ins: even,
/// `eval(0) = 1`, zero outside `[-1, 1]`, and an autocorrelation of some
/// compactly supported function (so every layer is positive definite).
pub trait SeedShape: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn eval(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    /// Exact `sup |k'|`.
    fn deriv_sup(&self) -> f64;
    /// Points of `(0, 1)` where the seed is not smooth.
    fn knots(&self) -> &[f64] {
        &[]
    }
    /// Whether `k'(0)` exists (and is then 0 by evenness).
    fn differentiable_at_origin(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Triangle,
    Bspline3,
}

impl fmt::Display for KernelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelName::Triangle => "triangle",
            KernelName::Bspline3 => "bspline3",
        })
    }
}

impl FromStr for KernelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triangle" => Ok(KernelName::Triangle),
            "bspline3" => Ok(KernelName::Bspline3),
            other => Err(invalid(format!(
                "unknown kernel {other:?} (expected \"triangle\" or \"bspline3\")"
            ))),
        }
    }
}

/// The seed `k`.
///
/// * `Triangle`: `(1 - |x|)_+`. Closed-form covariance, `‖k'‖∞ = 1`, only
///   piecewise C¹.
/// * `BSpline3`: the cubic B-spline squeezed onto `[-1, 1]` and scaled to
///   `k(0) = 1`, i.e. `1 - 6x² + 6|x|³` on `|x| ≤ 1/2` and `2(1 - |x|)³` on
///   `1/2 ≤ |x| ≤ 1`. C², `‖k'‖∞ = 2` (attained at `|x| = 1/3`).
#[derive(Debug, Clone)]
pub enum SeedKernel {
    Triangle,
    BSpline3,
    Custom(Arc<dyn SeedShape>),
}

const BSPLINE_KNOTS: [f64; 1] = [0.5];

impl SeedKernel {
    pub fn from_name(name: KernelName) -> Self {
        match name {
            KernelName::Triangle => SeedKernel::Triangle,
            KernelName::Bspline3 => SeedKernel::BSpline3,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            SeedKernel::Triangle => "triangle",
            SeedKernel::BSpline3 => "bspline3",
            SeedKernel::Custom(s) => s.name(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            SeedKernel::Triangle => (1.0 - a).max(0.0),
            SeedKernel::BSpline3 => {
                if a >= 1.0 {
                    0.0
                } else if a <= 0.5 {
                    1.0 - 6.0 * a * a + 6.0 * a * a * a
                } else {
                    let b = 1.0 - a;
                    2.0 * b * b * b
                }
            }
            SeedKernel::Custom(s) => s.eval(x),
        }
    }

    /// `k'(x)`; for the triangle the one-sided value `-sign(x)` is returned
    /// at kinks, and 0 at the origin.
    pub fn deriv(&self, x: f64) -> f64 {
        let a = x.abs();
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        match self {
            SeedKernel::Triangle => {
                if a >= 1.0 || x == 0.0 {
                    0.0
                } else {
                    -sign
                }
            }
            SeedKernel::BSpline3 => {
                let d = if a >= 1.0 {
                    0.0
                } else if a <= 0.5 {
                    -12.0 * a + 18.0 * a * a
                } else {
                    let b = 1.0 - a;
                    -6.0 * b * b
                };
                sign * d
            }
            SeedKernel::Custom(s) => s.deriv(x),
        }
    }

    pub fn deriv_sup(&self) -> f64 {
        match self {
            SeedKernel::Triangle => 1.0,
            SeedKernel::BSpline3 => 2.0,
            SeedKernel::Custom(s) => s.deriv_sup(),
        }
    }

    fn knots(&self) -> &[f64] {
        match self {
            SeedKernel::Triangle => &[],
            SeedKernel::BSpline3 => &BSPLINE_KNOTS,
            SeedKernel::Custom(s) => s.knots(),
        }
    }

    fn differentiable_at_origin(&self) -> bool {
        match self {
            SeedKernel::Triangle => false,
            SeedKernel::BSpline3 => true,
            SeedKernel::Custom(s) => s.differentiable_at_origin(),
        }
    }
}

/// How the line covariance is carried over to the unit circle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CircleGeometry {
    /// `K_t` evaluated at arc distance. Positive definite for the triangle,
    /// not for the spline on levels below `log 2`.
    #[default]
    Arc,
    /// `Σ_m K_t(|d + m|)`: positive definite for every seed, equal to `Arc`
    /// on levels `>= log 2`.
    Periodized,
}

impl fmt::Display for CircleGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CircleGeometry::Arc => "arc",
            CircleGeometry::Periodized => "periodized",
        })
    }
}

impl FromStr for CircleGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arc" => Ok(CircleGeometry::Arc),
            "periodized" => Ok(CircleGeometry::Periodized),
            other => Err(invalid(format!(
                "unknown geometry {other:?} (expected \"arc\" or \"periodized\")"
            ))),
        }
    }
}

/// `K_t(Δ)` for a fixed seed.
#[derive(Debug, Clone)]
pub struct ScaleCovariance {
    pub kernel: SeedKernel,
    /// Absolute tolerance for the adaptive quadrature.
    pub quadrature_tol: f64,
    pub geometry: CircleGeometry,
}

impl ScaleCovariance {
    pub fn new(kernel: SeedKernel) -> Self {
        Self {
            kernel,
            quadrature_tol: DEFAULT_TOL,
            geometry: CircleGeometry::Arc,
        }
    }

    pub fn with_geometry(mut self, geometry: CircleGeometry) -> Self {
        self.geometry = geometry;
        self
    }

    pub fn triangle() -> Self {
        Self::new(SeedKernel::Triangle)
    }

    pub fn bspline3() -> Self {
        Self::new(SeedKernel::BSpline3)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.quadrature_tol = tol;
        self
    }

    pub fn k(&self, x: f64) -> f64 {
        self.kernel.eval(x)
    }

    /// `K_t(Δ)`; exactly `t` at `Δ = 0`.
    pub fn eval(&self, t: f64, gap: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(invalid(format!("K_t needs t >= 0, got {t}")));
        }
        self.integrate_levels(0.0, t, gap)
    }

    /// `K_t(Δ) - K_s(Δ)`, the covariance carried by the layer `(s, t]`.
    pub fn layer(&self, s: f64, t: f64, gap: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(invalid(format!("layer start must be >= 0, got {s}")));
        }
        if s > t {
            return Err(invalid(format!("layer needs s <= t, got s = {s}, t = {t}")));
        }
        self.integrate_levels(s, t, gap)
    }

    /// Layer covariance of the field on the unit circle at circle distance
    /// `d`. With `Periodized` geometry this is `Σ_m K_layer(s, t, |d + m|)`;
    /// only `m ∈ {0, -1}` contribute and the wrapped term lives on levels
    /// below `log 2`.
    pub fn circle_layer(&self, s: f64, t: f64, d: f64) -> Result<f64> {
        let d = d.abs().rem_euclid(1.0);
        let d = d.min(1.0 - d);
        let near = self.layer(s, t, d)?;
        let far = match self.geometry {
            CircleGeometry::Periodized if d > 0.0 => self.layer(s, t, 1.0 - d)?,
            _ => 0.0,
        };
        Ok(near + far)
    }

    /// `K_t` of the field on the circle at circle distance `d`.
    pub fn circle_eval(&self, t: f64, d: f64) -> Result<f64> {
        self.circle_layer(0.0, t, d)
    }

    /// `∂_Δ K_t(Δ) = ∫_1^{e^t} k'(uΔ) du = (k(e^t Δ) - k(Δ)) / Δ`.
    ///
    /// At `Δ = 0` this is 0 for seeds differentiable at the origin and an
    /// error for the triangle, whose covariance has a corner there.
    pub fn prime(&self, t: f64, gap: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(invalid(format!("K'_t needs t >= 0, got {t}")));
        }
        if gap == 0.0 {
            return if self.kernel.differentiable_at_origin() {
                Ok(0.0)
            } else {
                Err(Error::NonDifferentiable {
                    kernel: self.kernel.name().to_string(),
                    gap,
                })
            };
        }
        let top = if t * std::f64::consts::LOG2_E > 1023.0 {
            0.0
        } else {
            self.k(t.exp() * gap)
        };
        Ok((top - self.k(gap)) / gap)
    }

    /// `∂_u K_u(Δ) = k(e^u Δ)`, the instantaneous cross-correlation rate.
    pub fn level_rate(&self, u: f64, gap: f64) -> f64 {
        if gap == 0.0 {
            return 1.0;
        }
        self.k(u.exp() * gap)
    }

    fn integrate_levels(&self, s: f64, t: f64, gap: f64) -> Result<f64> {
        let gap = gap.abs();
        if gap == 0.0 {
            return Ok(t - s);
        }
        // Beyond v = -log Δ the seed argument leaves its support.
        let hi = t.min(-gap.ln());
        if hi <= s {
            return Ok(0.0);
        }
        match &self.kernel {
            SeedKernel::Triangle => Ok((hi - s) - gap * (hi.exp() - s.exp())),
            kernel => {
                let f = |v: f64| kernel.eval(v.exp() * gap);
                let interior: Vec<f64> = kernel.knots().iter().map(|x| (x / gap).ln()).collect();
                let pts = quad::breakpoints(s, hi, &interior);
                quad::integrate_pieces(&f, &pts, self.quadrature_tol)
            }
        }
    }
}

/// Layer offsets probed by [`verify_estimates`].
pub const ESTIMATE_LAYER_OFFSETS: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0];

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub r: f64,
    /// `max |K_r(Δ) - r|` over the gap grid.
    pub variance_deviation: f64,
    /// `max |K_{r+s}(Δ) - K_r(Δ) - s ∧ (log Δ⁻¹ - r)|` over gaps and offsets.
    pub layer_deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub kernel: String,
    /// `e ‖k'‖∞`.
    pub bound: f64,
    pub rows: Vec<EstimateRow>,
}

impl EstimateReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Sweep the short-range covariance estimates on a dense gap grid in
/// `[0, e^{1-r}]` and compare against the constant `e ‖k'‖∞`.
pub fn verify_estimates(cov: &ScaleCovariance, r_list: &[f64]) -> Result<EstimateReport> {
    let bound = E * cov.kernel.deriv_sup();
    let mut rows = Vec::with_capacity(r_list.len());
    for &r in r_list {
        if !(r >= 0.0) {
            return Err(invalid(format!("estimate sweep needs r >= 0, got {r}")));
        }
        let gaps = estimate_gap_grid(r);
        let mut variance_deviation: f64 = 0.0;
        let mut layer_deviation: f64 = 0.0;
        for &gap in &gaps {
            variance_deviation = variance_deviation.max((cov.eval(r, gap)? - r).abs());
            for &s in &ESTIMATE_LAYER_OFFSETS {
                let reference = if gap == 0.0 {
                    s
                } else {
                    s.min(-gap.ln() - r)
                };
                let got = cov.layer(r, r + s, gap)?;
                layer_deviation = layer_deviation.max((got - reference).abs());
            }
        }
        rows.push(EstimateRow {
            r,
            variance_deviation,
            layer_deviation,
            pass: variance_deviation <= bound && layer_deviation <= bound,
        });
    }
    Ok(EstimateReport {
        kernel: cov.kernel.name().to_string(),
        bound,
        rows,
    })
}

fn estimate_gap_grid(r: f64) -> Vec<f64> {
    let top = (1.0 - r).exp();
    let mut gaps = vec![0.0];
    let lin = 400;
    gaps.extend((1..=lin).map(|i| top * i as f64 / lin as f64));
    let lo = (-r - 12.0).exp();
    let log_pts = 400;
    let (a, b) = (lo.ln(), top.ln());
    gaps.extend((0..log_pts).map(|i| (a + (b - a) * i as f64 / (log_pts - 1) as f64).exp()));
    gaps
}
