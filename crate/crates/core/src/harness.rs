//! Monte Carlo experiments: tightness of `(log n)|c_n|` on the good event,
//! the second-moment decay, the scale decomposition of the near-diagonal
//! energy and the subcritical scaling conjectures.
//!
//! Replicas are independent: replica `r` draws its field from the stream
//! `(seed, r)` and results are reduced in replica order, so output does not
//! depend on the number of workers.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{required_grid_size, FieldSampler, LayeredFieldSample, SpatialGrid, TimeGrid};
use crate::fourier::{exact_second_moment, FourierEngine};
use crate::gmc::{gmc_weights, restricted_measure, GmcParams, GoodEventParams, GoodSetBarrier};
use crate::kernel::{CircleGeometry, KernelName, ScaleCovariance, SeedKernel};
use crate::rng::StreamKey;
use crate::stats::{mean_stderr, quantile, spearman};

pub use crate::stats::fit_log_slope;

pub const SCHEMA: &str = "gmcf-1";
pub const CSV_HEADER: &str = "n,replica,re_c,im_c,good,total_mass,re_cI,im_cI,re_cII,im_cII,seed";
pub const QUANTILE_LEVELS: [f64; 3] = [0.5, 0.9, 0.99];
pub const EXCEEDANCE_LEVELS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Flat, validated description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelName,
    pub geometry: CircleGeometry,
    pub gamma: f64,
    pub delta: f64,
    pub a: f64,
    pub t: f64,
    pub layer_width: f64,
    pub grid_size: usize,
    pub n_list: Vec<u64>,
    pub replicas: u64,
    pub seed: u64,
    /// Worker threads; `None` uses the machine parallelism.
    pub workers: Option<usize>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kernel: KernelName::Triangle,
            geometry: CircleGeometry::Arc,
            gamma: SQRT_2,
            delta: 0.2,
            a: 8.0,
            t: 9.0,
            layer_width: 0.25,
            grid_size: 1 << 16,
            n_list: vec![8, 16, 32, 64, 128, 256, 512],
            replicas: 2000,
            seed: 20_240_601,
            workers: None,
            output: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Checks shared by every experiment. `min_n` is 2 where the good event
    /// is used and 1 otherwise.
    pub fn validate(&self, min_n: u64) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= SQRT_2 + 1e-12) {
            return Err(invalid(format!("gamma: must satisfy 0 < gamma <= sqrt(2), got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < 0.25) {
            return Err(invalid(format!("delta: must satisfy 0 < delta < 0.25, got {}", self.delta)));
        }
        if !(self.a > 0.0) {
            return Err(invalid(format!("a: must be > 0, got {}", self.a)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid(format!("t: must be finite and > 0, got {}", self.t)));
        }
        if !(self.layer_width > 0.0) {
            return Err(invalid(format!("layer_width: must be > 0, got {}", self.layer_width)));
        }
        SpatialGrid::new(self.grid_size)
            .map_err(|_| invalid(format!("grid_size: must be a power of two >= 2, got {}", self.grid_size)))?;
        let need = required_grid_size(self.t);
        if self.grid_size < need {
            return Err(invalid(format!(
                "grid_size: 1/N <= e^-t requires N >= {need} at t = {}, got {}",
                self.t, self.grid_size
            )));
        }
        if self.n_list.is_empty() {
            return Err(invalid("n_list: must not be empty"));
        }
        if let Some(&bad) = self.n_list.iter().find(|&&n| n < min_n) {
            return Err(invalid(format!("n_list: every n must be >= {min_n}, got {bad}")));
        }
        let n_max = *self.n_list.iter().max().unwrap();
        if n_max as usize >= self.grid_size / 2 {
            return Err(invalid(format!(
                "n_list: n = {n_max} aliases on a grid of {} points (need n < N/2)",
                self.grid_size
            )));
        }
        if self.replicas == 0 {
            return Err(invalid("replicas: must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers: must be >= 1"));
        }
        Ok(())
    }

    pub fn covariance(&self) -> ScaleCovariance {
        ScaleCovariance::new(SeedKernel::from_name(self.kernel)).with_geometry(self.geometry)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.layer_width, self.t)
    }

    pub fn chaos(&self) -> Result<GmcParams> {
        GmcParams::new(self.gamma, self.t)
    }

    pub fn good_event(&self, n: u64) -> Result<GoodEventParams> {
        GoodEventParams::new(self.a, self.delta, n)
    }

    fn sampler(&self) -> Result<FieldSampler> {
        FieldSampler::new(&self.covariance(), self.time_grid()?, SpatialGrid::new(self.grid_size)?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            b = b.num_threads(w);
        }
        b.build().map_err(|e| Error::Numeric(format!("thread pool: {e}")))
    }
}

/// One `(n, replica)` observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Row {
    pub n: u64,
    pub replica: u64,
    pub c: [f64; 2],
    /// Absent when the experiment does not evaluate the good event.
    pub good: Option<bool>,
    pub total_mass: f64,
    pub c_i: Option<[f64; 2]>,
    pub c_ii: Option<[f64; 2]>,
    pub seed: u64,
}

impl Row {
    pub fn coefficient(&self) -> Complex64 {
        Complex64::new(self.c[0], self.c[1])
    }

    fn csv_line(&self, out: &mut String) {
        let opt = |v: Option<[f64; 2]>| match v {
            Some([re, im]) => (re.to_string(), im.to_string()),
            None => (String::new(), String::new()),
        };
        let (ri, ii) = opt(self.c_i);
        let (rii, iii) = opt(self.c_ii);
        let good = match self.good {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.n, self.replica, self.c[0], self.c[1], good, self.total_mass, ri, ii, rii, iii, self.seed
        );
    }
}

pub fn rows_to_csv(rows: &[Row]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        r.csv_line(&mut out);
    }
    out
}

/// Write `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
}

impl Quantiles {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let q = |p| quantile(xs, p).expect("non-empty sample");
        Some(Self {
            q50: q(QUANTILE_LEVELS[0]),
            q90: q(QUANTILE_LEVELS[1]),
            q99: q(QUANTILE_LEVELS[2]),
        })
    }
}

/// Per-`n` summary of a tightness run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessSummary {
    pub n: u64,
    pub log_n: f64,
    pub replicas: u64,
    pub good_count: u64,
    pub good_frequency: f64,
    /// `E[|c_n|²; E]` and its standard error.
    pub mean_sq_good: f64,
    pub mean_sq_good_stderr: f64,
    /// `E|c_n|²` without the good event.
    pub mean_sq: f64,
    pub mean_sq_stderr: f64,
    /// Quantiles of `(log n)|c_n|` over good-event replicas.
    pub quantiles_good: Option<Quantiles>,
    /// `P((log n)|c_n| > K | E)` for `K` in [`EXCEEDANCE_LEVELS`].
    pub exceedance_good: Vec<(f64, f64)>,
    /// Means of the region contributions of the restricted measure.
    pub mean_c_i: f64,
    pub mean_c_ii: f64,
}

fn group_by_n(rows: &[Row]) -> BTreeMap<u64, Vec<&Row>> {
    let mut by_n: BTreeMap<u64, Vec<&Row>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n).or_default().push(r);
    }
    by_n
}

/// Summaries depend on the rows only.
pub fn summarize_tightness(rows: &[Row]) -> Vec<TightnessSummary> {
    group_by_n(rows)
        .into_iter()
        .map(|(n, rs)| {
            let log_n = (n as f64).ln();
            let sq: Vec<f64> = rs.iter().map(|r| r.coefficient().norm_sqr()).collect();
            let good: Vec<bool> = rs.iter().map(|r| r.good.unwrap_or(false)).collect();
            let sq_good: Vec<f64> = sq.iter().zip(&good).map(|(v, &g)| if g { *v } else { 0.0 }).collect();
            let scaled: Vec<f64> = rs
                .iter()
                .zip(&good)
                .filter(|(_, &g)| g)
                .map(|(r, _)| log_n * r.coefficient().norm())
                .collect();
            let (mean_sq_good, mean_sq_good_stderr) = mean_stderr(&sq_good);
            let (mean_sq, mean_sq_stderr) = mean_stderr(&sq);
            let exceedance_good = EXCEEDANCE_LEVELS
                .iter()
                .map(|&k| {
                    let p = if scaled.is_empty() {
                        f64::NAN
                    } else {
                        scaled.iter().filter(|&&v| v > k).count() as f64 / scaled.len() as f64
                    };
                    (k, p)
                })
                .collect();
            let region = |f: fn(&Row) -> Option<[f64; 2]>| {
                let v: Vec<f64> = rs.iter().filter_map(|r| f(r).map(|z| z[0])).collect();
                mean_stderr(&v).0
            };
            TightnessSummary {
                n,
                log_n,
                replicas: rs.len() as u64,
                good_count: scaled.len() as u64,
                good_frequency: scaled.len() as f64 / rs.len() as f64,
                mean_sq_good,
                mean_sq_good_stderr,
                mean_sq,
                mean_sq_stderr,
                quantiles_good: Quantiles::of(&scaled),
                exceedance_good,
                mean_c_i: region(|r| r.c_i),
                mean_c_ii: region(|r| r.c_ii),
            }
        })
        .collect()
}

/// Trend checks on a tightness run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessDiagnostics {
    /// Slope of `log E[|c_n|²; E]` against `log log n`, with its stderr.
    pub decay_slope: f64,
    pub decay_slope_stderr: f64,
    /// max / min over `n` of `(log n)² E[|c_n|²; E]`.
    pub scaled_moment_ratio: f64,
    /// max / min over `n` of the 0.9-quantile of `(log n)|c_n|` on `E`.
    pub q90_ratio: f64,
    /// Spearman correlation of that quantile with `n`.
    pub q90_spearman: f64,
}

pub fn tightness_diagnostics(summaries: &[TightnessSummary]) -> Result<TightnessDiagnostics> {
    let ratio = |v: &[f64]| {
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    };
    let xs: Vec<f64> = summaries.iter().map(|s| s.log_n.ln()).collect();
    let ys: Vec<f64> = summaries.iter().map(|s| s.mean_sq_good.ln()).collect();
    let (decay_slope, decay_slope_stderr) = fit_log_slope(&xs, &ys)?;
    let scaled: Vec<f64> = summaries.iter().map(|s| s.log_n.powi(2) * s.mean_sq_good).collect();
    let q90: Vec<f64> = summaries
        .iter()
        .map(|s| s.quantiles_good.as_ref().map_or(f64::NAN, |q| q.q90))
        .collect();
    if q90.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("some n has no good-event replica".into()));
    }
    let ns: Vec<f64> = summaries.iter().map(|s| s.n as f64).collect();
    Ok(TightnessDiagnostics {
        decay_slope,
        decay_slope_stderr,
        scaled_moment_ratio: ratio(&scaled),
        q90_ratio: ratio(&q90),
        q90_spearman: spearman(&ns, &q90)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub schema: &'static str,
    pub kind: &'static str,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ExperimentResult {
    fn new(kind: &'static str, config: &ExperimentConfig, rows: Vec<Row>) -> Self {
        Self {
            schema: SCHEMA,
            kind,
            config: config.clone(),
            rows,
            metadata: BTreeMap::new(),
        }
    }

    pub fn csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    /// JSON summary: everything except the rows.
    pub fn summary_json(&self, summary: &impl Serialize) -> Result<String> {
        let doc = serde_json::json!({
            "schema": self.schema,
            "kind": self.kind,
            "config": self.config,
            "metadata": self.metadata,
            "summary": summary,
        });
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Numeric(format!("json: {e}")))
    }
}

/// Cached autocorrelation of one restricted measure, keyed by its barrier.
struct MaskCache {
    r_level: usize,
    good: bool,
    autocorr: Vec<f64>,
}

fn tightness_replica(
    cfg: &ExperimentConfig,
    sampler: &FieldSampler,
    engine: &FourierEngine,
    chaos: &GmcParams,
    barriers: &[(u64, GoodEventParams, GoodSetBarrier)],
    replica: u64,
) -> Result<Vec<Row>> {
    let sample = sampler.sample(StreamKey::new(cfg.seed, replica));
    let w = gmc_weights(&sample, chaos)?;
    let total = w.total_mass();
    let n_max = barriers.iter().map(|b| b.0).max().unwrap_or(0) as usize;
    let coeffs = engine.coefficients(&w, n_max)?;
    let mut cache: Vec<MaskCache> = Vec::new();
    let mut rows = Vec::with_capacity(barriers.len());
    for (n, gp, barrier) in barriers {
        let idx = match cache.iter().position(|c| c.r_level == barrier.r_level()) {
            Some(i) => i,
            None => {
                let mask = barrier.mask(&sample);
                let good = mask.iter().all(|&b| b);
                let restricted = restricted_measure(&w, &mask)?;
                cache.push(MaskCache {
                    r_level: barrier.r_level(),
                    good,
                    autocorr: engine.autocorrelation(&restricted.masses),
                });
                cache.len() - 1
            }
        };
        let entry = &cache[idx];
        let split = engine.split(&entry.autocorr, *n, gp.delta_n());
        let c = coeffs.get(*n as usize);
        rows.push(Row {
            n: *n,
            replica,
            c: [c.re, c.im],
            good: Some(entry.good),
            total_mass: total,
            c_i: Some([split.c_i.0, split.c_i.1]),
            c_ii: Some([split.c_ii.0, split.c_ii.1]),
            seed: cfg.seed,
        });
    }
    Ok(rows)
}

/// Rows sorted by `(n, replica)`.
fn sort_rows(mut per_replica: Vec<Vec<Row>>) -> Vec<Row> {
    let mut rows: Vec<Row> = per_replica.drain(..).flatten().collect();
    rows.sort_by_key(|r| (r.n, r.replica));
    rows
}

/// Critical (or configured-`γ`) chaos, good event per `n`, coefficients
/// and region split of the restricted measure.
pub fn run_tightness_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Vec<TightnessSummary>)> {
    cfg.validate(2)?;
    let sampler = cfg.sampler()?;
    let chaos = cfg.chaos()?;
    let engine = FourierEngine::new(cfg.grid_size);
    let barriers = cfg
        .n_list
        .iter()
        .map(|&n| {
            let gp = cfg.good_event(n)?;
            let b = GoodSetBarrier::new(sampler.times().levels(), &gp)?;
            Ok((n, gp, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = cfg.pool()?;
    let per_replica = pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| tightness_replica(cfg, &sampler, &engine, &chaos, &barriers, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = sort_rows(per_replica);
    let summaries = summarize_tightness(&rows);
    let mut result = ExperimentResult::new("tightness", cfg, rows);
    result.metadata.insert("critical".into(), chaos.critical.into());
    result.metadata.insert("seed".into(), cfg.seed.into());
    Ok((result, summaries))
}

/// Exponents `(p, q)` of the statistic `(log n)^p n^q |c_n|`.
pub fn conjecture_exponents(gamma: f64) -> Result<(f64, f64)> {
    let edge = std::f64::consts::FRAC_1_SQRT_2;
    if (gamma - edge).abs() < 1e-12 {
        return Ok((0.25, 0.25));
    }
    if !(gamma > edge && gamma < SQRT_2) {
        return Err(invalid(format!(
            "gamma: conjectures cover 1/sqrt(2) <= gamma < sqrt(2), got {gamma}"
        )));
    }
    Ok((3.0 * gamma / (2.0 * SQRT_2), (SQRT_2 - gamma).powi(2) / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjectureSummary {
    pub n: u64,
    pub log_exponent: f64,
    pub n_exponent: f64,
    pub replicas: u64,
    pub quantiles: Quantiles,
}

pub fn summarize_conjecture(rows: &[Row], gamma: f64) -> Result<Vec<ConjectureSummary>> {
    let (p, q) = conjecture_exponents(gamma)?;
    group_by_n(rows)
        .into_iter()
        .map(|(n, rs)| {
            let nf = n as f64;
            let scale = nf.ln().powf(p) * nf.powf(q);
            let stat: Vec<f64> = rs.iter().map(|r| scale * r.coefficient().norm()).collect();
            Ok(ConjectureSummary {
                n,
                log_exponent: p,
                n_exponent: q,
                replicas: rs.len() as u64,
                quantiles: Quantiles::of(&stat).ok_or_else(|| invalid("no replicas"))?,
            })
        })
        .collect()
}

/// Subcritical chaos; the scaled statistic of the conjectured limits.
pub fn run_conjecture_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Vec<ConjectureSummary>)> {
    cfg.validate(2)?;
    let (p, q) = conjecture_exponents(cfg.gamma)?;
    let sampler = cfg.sampler()?;
    let chaos = cfg.chaos()?;
    let engine = FourierEngine::new(cfg.grid_size);
    let n_max = *cfg.n_list.iter().max().unwrap() as usize;
    let pool = cfg.pool()?;
    let per_replica = pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| -> Result<Vec<Row>> {
                let sample = sampler.sample(StreamKey::new(cfg.seed, r));
                let w = gmc_weights(&sample, &chaos)?;
                let total = w.total_mass();
                let coeffs = engine.coefficients(&w, n_max)?;
                Ok(cfg
                    .n_list
                    .iter()
                    .map(|&n| {
                        let c = coeffs.get(n as usize);
                        Row {
                            n,
                            replica: r,
                            c: [c.re, c.im],
                            good: None,
                            total_mass: total,
                            c_i: None,
                            c_ii: None,
                            seed: cfg.seed,
                        }
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = sort_rows(per_replica);
    let summaries = summarize_conjecture(&rows, cfg.gamma)?;
    let mut result = ExperimentResult::new("conjecture", cfg, rows);
    result.metadata.insert("log_exponent".into(), p.into());
    result.metadata.insert("n_exponent".into(), q.into());
    result.metadata.insert("seed".into(), cfg.seed.into());
    Ok((result, summaries))
}

/// Ratio of the largest to the smallest median of the scaled statistic.
pub fn median_spread(summaries: &[ConjectureSummary]) -> f64 {
    let m: Vec<f64> = summaries.iter().map(|s| s.quantiles.q50).collect();
    m.iter().copied().fold(f64::NEG_INFINITY, f64::max) / m.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondMomentRow {
    pub n: u64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub exact: f64,
    /// `(mc - exact) / stderr`.
    pub z: f64,
}

impl SecondMomentRow {
    pub fn pass(&self) -> bool {
        self.z.abs() <= 4.0
    }
}

/// `E|c_{n,t}|²` without the good event, MC against quadrature. `n = 1` is
/// allowed here.
pub fn run_second_moment(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Vec<SecondMomentRow>)> {
    cfg.validate(1)?;
    let sampler = cfg.sampler()?;
    let chaos = cfg.chaos()?;
    let engine = FourierEngine::new(cfg.grid_size);
    let n_max = *cfg.n_list.iter().max().unwrap() as usize;
    let pool = cfg.pool()?;
    let per_replica = pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| -> Result<Vec<Row>> {
                let sample = sampler.sample(StreamKey::new(cfg.seed, r));
                let w = gmc_weights(&sample, &chaos)?;
                let total = w.total_mass();
                let coeffs = engine.coefficients(&w, n_max)?;
                Ok(cfg
                    .n_list
                    .iter()
                    .map(|&n| {
                        let c = coeffs.get(n as usize);
                        Row {
                            n,
                            replica: r,
                            c: [c.re, c.im],
                            good: None,
                            total_mass: total,
                            c_i: None,
                            c_ii: None,
                            seed: cfg.seed,
                        }
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = sort_rows(per_replica);
    let cov = cfg.covariance();
    let table = group_by_n(&rows)
        .into_iter()
        .map(|(n, rs)| {
            let sq: Vec<f64> = rs.iter().map(|r| r.coefficient().norm_sqr()).collect();
            let (mc_mean, mc_stderr) = mean_stderr(&sq);
            let exact = exact_second_moment(&cov, &chaos, n)?;
            Ok(SecondMomentRow {
                n,
                mc_mean,
                mc_stderr,
                exact,
                z: (mc_mean - exact) / mc_stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut result = ExperimentResult::new("second-moment", cfg, rows);
    result.metadata.insert("seed".into(), cfg.seed.into());
    Ok((result, table))
}

/// Mean total mass and its standard error (the `n = 0` coefficient).
pub fn total_mass_check(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let sampler = cfg.sampler()?;
    let chaos = cfg.chaos()?;
    let pool = cfg.pool()?;
    let masses = pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| Ok(gmc_weights(&sampler.sample(StreamKey::new(cfg.seed, r)), &chaos)?.total_mass()))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(mean_stderr(&masses))
}

/// Band edges in units of `log n` for `a = log Δ^{-1} / log n`.
pub const DEFAULT_BAND_EDGES: [f64; 8] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, f64::INFINITY];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandRow {
    pub n: u64,
    /// `[lo, hi)` in units of `log n`.
    pub lo: f64,
    pub hi: f64,
    /// Mean over replicas of the band's share of `Σ e^{2πinΔ} w̃ w̃`.
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleDecomposition {
    pub bands: Vec<BandRow>,
    /// Per `n`: mean of `C_I + C_II` over replicas.
    pub totals: Vec<(u64, f64)>,
    /// Per `n`: fraction of the mean energy from `a >= log log n`.
    pub tail_fraction: Vec<(u64, f64)>,
}

fn band_sums(engine_size: usize, autocorr: &[f64], n: u64, edges: &[f64], tail_from: f64) -> (Vec<f64>, f64) {
    let mut sums = vec![0.0; edges.len() - 1];
    let mut tail = 0.0;
    let ln_n = (n as f64).ln();
    let nm = (n % engine_size as u64) as usize;
    for (g, &r) in autocorr.iter().enumerate() {
        let k = g.min(engine_size - g);
        let a = if k == 0 {
            f64::INFINITY
        } else {
            (engine_size as f64 / k as f64).ln() / ln_n
        };
        let phase = 2.0 * PI * ((nm * g) % engine_size) as f64 / engine_size as f64;
        let v = phase.cos() * r;
        // the diagonal (a = ∞) belongs to a band ending at ∞
        if let Some(b) = edges
            .windows(2)
            .position(|w| a >= w[0] && (a < w[1] || w[1] == f64::INFINITY))
        {
            sums[b] += v;
        }
        if a >= tail_from {
            tail += v;
        }
    }
    (sums, tail)
}

/// Pair energy of the restricted measure binned by `log Δ^{-1} / log n`.
pub fn run_scale_decomposition(cfg: &ExperimentConfig, edges: &[f64]) -> Result<ScaleDecomposition> {
    cfg.validate(2)?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("band edges must be increasing, at least two"));
    }
    let chaos = cfg.chaos()?;
    if !chaos.critical {
        return Err(invalid("scale decomposition needs critical gamma"));
    }
    let sampler = cfg.sampler()?;
    let engine = FourierEngine::new(cfg.grid_size);
    let barriers = cfg
        .n_list
        .iter()
        .map(|&n| Ok((n, GoodSetBarrier::new(sampler.times().levels(), &cfg.good_event(n)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let pool = cfg.pool()?;
    // per replica, per n: (band sums, tail)
    let per_replica = pool.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| -> Result<Vec<(Vec<f64>, f64)>> {
                let sample: LayeredFieldSample = sampler.sample(StreamKey::new(cfg.seed, r));
                let w = gmc_weights(&sample, &chaos)?;
                barriers
                    .iter()
                    .map(|(n, b)| {
                        let restricted = restricted_measure(&w, &b.mask(&sample))?;
                        let ac = engine.autocorrelation(&restricted.masses);
                        let tail_from = (*n as f64).ln().ln();
                        Ok(band_sums(cfg.grid_size, &ac, *n, edges, tail_from))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut bands = Vec::new();
    let mut totals = Vec::new();
    let mut tail_fraction = Vec::new();
    for (j, (n, _)) in barriers.iter().enumerate() {
        let mut total = 0.0;
        for b in 0..edges.len() - 1 {
            let v: Vec<f64> = per_replica.iter().map(|rep| rep[j].0[b]).collect();
            let (mean, stderr) = mean_stderr(&v);
            total += mean;
            bands.push(BandRow {
                n: *n,
                lo: edges[b],
                hi: edges[b + 1],
                mean,
                stderr,
            });
        }
        let tail: Vec<f64> = per_replica.iter().map(|rep| rep[j].1).collect();
        totals.push((*n, total));
        tail_fraction.push((*n, mean_stderr(&tail).0 / total));
    }
    Ok(ScaleDecomposition {
        bands,
        totals,
        tail_fraction,
    })
}

/// Settings of the covariance fidelity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceCheck {
    pub kernel: KernelName,
    pub geometry: CircleGeometry,
    pub t: f64,
    pub layer_width: f64,
    pub grid_size: usize,
    pub replicas: u64,
    pub lags: usize,
    /// Smallest lag in grid offsets; the largest is `N/2`.
    pub min_offset: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagRow {
    pub offset: usize,
    pub gap: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub exact: f64,
}

impl LagRow {
    pub fn pass(&self) -> bool {
        (self.empirical - self.exact).abs() <= 4.0 * self.stderr
    }
}

/// `count` log-spaced distinct integer offsets in `[lo, hi]`.
pub fn log_offsets(lo: usize, hi: usize, count: usize) -> Result<Vec<usize>> {
    if lo == 0 || hi <= lo || count < 2 {
        return Err(invalid(format!("offsets need 0 < lo < hi and count >= 2, got ({lo}, {hi}, {count})")));
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut v: Vec<usize> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    v.dedup();
    if v.len() != count {
        return Err(invalid(format!("cannot fit {count} distinct offsets in [{lo}, {hi}]")));
    }
    Ok(v)
}

/// Empirical `Cov(X_t(θ), X_t(θ + Δ))` against `K_t` at log-spaced lags.
/// Each replica contributes its spatially averaged circular
/// autocorrelation; the standard error comes from the spread across
/// replicas.
pub fn covariance_fidelity(check: &CovarianceCheck) -> Result<Vec<LagRow>> {
    let cov = ScaleCovariance::new(SeedKernel::from_name(check.kernel)).with_geometry(check.geometry);
    let grid = SpatialGrid::new(check.grid_size)?;
    let sampler = FieldSampler::new(&cov, TimeGrid::uniform(check.layer_width, check.t)?, grid)?;
    let offsets = log_offsets(check.min_offset, check.grid_size / 2, check.lags)?;
    let engine = FourierEngine::new(check.grid_size);
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = check.workers {
        b = b.num_threads(w);
    }
    let pool = b.build().map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    let per_replica: Vec<Vec<f64>> = pool.install(|| {
        (0..check.replicas)
            .into_par_iter()
            .map(|r| {
                let x = sampler.sample(StreamKey::new(check.seed, r)).horizon_values();
                let ac = engine.autocorrelation(&x);
                offsets.iter().map(|&g| ac[g] / check.grid_size as f64).collect()
            })
            .collect()
    });
    offsets
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let v: Vec<f64> = per_replica.iter().map(|row| row[j]).collect();
            let (empirical, stderr) = mean_stderr(&v);
            let gap = grid.gap(g);
            Ok(LagRow {
                offset: g,
                gap,
                empirical,
                stderr,
                exact: cov.circle_eval(check.t, gap)?,
            })
        })
        .collect()
}
