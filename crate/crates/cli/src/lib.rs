//! `gmcf`: run verification suites and Monte Carlo experiments from a
//! config file.
//!
//! Fourier convention everywhere: `c_n = ∫ e^{+2πinθ} μ(dθ)` on `[0, 1)`.

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gmcf_core::brownian::{self, check_against_mc, reference_events};
use gmcf_core::harness::{
    self, covariance_fidelity, median_spread, run_conjecture_experiment, run_scale_decomposition,
    run_second_moment, run_tightness_experiment, tightness_diagnostics, write_atomic, CovarianceCheck,
    ExperimentResult, DEFAULT_BAND_EDGES,
};
use gmcf_core::kernel::{verify_estimates, ScaleCovariance};
use gmcf_core::twopoint::{run_fbound_sweep, SLOPE_RANGE};
use serde::Serialize;

pub use config::{parse_config, Config, ConfigError};

/// Exit statuses.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gmcf",
    version,
    about = "Log-correlated fields and multiplicative chaos on the circle",
    long_about = "Log-correlated fields and multiplicative chaos on the circle.\n\n\
        Fourier coefficients use c_n = sum_i exp(+2 pi i n theta_i) mu(theta_i) with theta_i = i/N.\n\
        Exit status: 0 all checks passed, 1 a check failed, 2 usage, config or I/O error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; falls back to GMCF_SEED, then to the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides experiment.output).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (overrides experiment.workers).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Kernel covariance estimates for both seeds, r = 1..r_max.
    VerifyKernel,
    /// Barrier and ballot formulas against Monte Carlo, plus bound sweeps.
    VerifyBrownian,
    /// Empirical field covariance against K_t at log-spaced lags.
    VerifyCovariance,
    /// E|c_n|^2 without the good event against quadrature.
    SecondMoment,
    /// Tightness of (log n)|c_n| on the good event.
    Tightness,
    /// Scaled subcritical statistic of the conjectured limits.
    Conjecture,
    /// Pair energy of the restricted measure by scale band.
    ScaleDecomp,
    /// Two-point auxiliary function against its bound.
    FboundSweep,
    /// Print the effective configuration.
    ShowConfig,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyKernel => "verify-kernel",
            Command::VerifyBrownian => "verify-brownian",
            Command::VerifyCovariance => "verify-covariance",
            Command::SecondMoment => "second-moment",
            Command::Tightness => "tightness",
            Command::Conjecture => "conjecture",
            Command::ScaleDecomp => "scale-decomp",
            Command::FboundSweep => "fbound-sweep",
            Command::ShowConfig => "show-config",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] gmcf_core::Error),
}

/// Printed check lines plus the overall verdict.
#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub pass: bool,
}

impl Report {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            pass: true,
        }
    }

    fn check(&mut self, ok: bool, text: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {text}", if ok { "PASS" } else { "FAIL" }));
    }

    fn info(&mut self, text: String) {
        self.lines.push(format!("INFO {text}"));
    }
}

/// Config after applying file, environment and flags.
pub fn effective_config(cli: &Cli, env_seed: Option<&str>) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    } else if let Some(s) = env_seed {
        cfg.experiment.seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("GMCF_SEED must be an unsigned integer, got {s:?}")))?;
    }
    if let Some(o) = &cli.out {
        cfg.experiment.output = o.clone();
    }
    if cli.workers.is_some() {
        cfg.experiment.workers = cli.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_json(v: &impl Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Usage(format!("json: {e}")))
}

fn write_outputs(dir: &Path, name: &str, cfg: &Config, json: &str, csv: Option<&str>) -> Result<(), CliError> {
    write_atomic(&dir.join(format!("{name}.json")), json.as_bytes())?;
    write_atomic(&dir.join(format!("{name}.config.toml")), cfg.echo().as_bytes())?;
    if let Some(csv) = csv {
        write_atomic(&dir.join(format!("{name}.csv")), csv.as_bytes())?;
    }
    Ok(())
}

fn experiment_json(
    result: &ExperimentResult,
    summary: &impl Serialize,
    report: &Report,
) -> Result<String, CliError> {
    let mut doc: serde_json::Value = serde_json::from_str(&result.summary_json(summary)?)
        .map_err(|e| CliError::Usage(format!("json: {e}")))?;
    doc["checks"] = serde_json::json!(report.lines);
    doc["pass"] = report.pass.into();
    to_json(&doc)
}

/// Run one subcommand; returns the report written to the output directory.
pub fn dispatch(cmd: Command, cfg: &Config) -> Result<Report, CliError> {
    let out = cfg.experiment.output.clone();
    let mut report = Report::new();
    let exp = cfg.experiment();
    report.info(format!("seed {}", exp.seed));
    match cmd {
        Command::ShowConfig => {
            report.lines.clear();
            report.lines.push(cfg.echo());
        }
        Command::VerifyKernel => {
            let r_list: Vec<f64> = (1..=cfg.kernel_check.r_max).map(f64::from).collect();
            let mut reports = Vec::new();
            for cov in [ScaleCovariance::triangle(), ScaleCovariance::bspline3()] {
                let rep = verify_estimates(&cov, &r_list)?;
                for row in &rep.rows {
                    report.check(
                        row.pass,
                        format!(
                            "{} r={} variance dev {:.3e} layer dev {:.3e} bound {:.4}",
                            rep.kernel, row.r, row.variance_deviation, row.layer_deviation, rep.bound
                        ),
                    );
                }
                reports.push(rep);
            }
            let json = to_json(&serde_json::json!({
                "schema": harness::SCHEMA, "kind": cmd.name(), "reports": reports,
                "checks": report.lines, "pass": report.pass,
            }))?;
            write_outputs(&out, cmd.name(), cfg, &json, None)?;
        }
        Command::VerifyBrownian => {
            let b = &cfg.brownian;
            let mut checks = Vec::new();
            for (name, ev) in reference_events() {
                let c = check_against_mc(name, &ev, b.dt, b.replicas, exp.seed, b.monitoring)?;
                report.check(
                    c.pass(),
                    format!(
                        "{name}: exact {:.6} mc {:.6} se {:.2e} |dev| {:.2e} ({:?})",
                        c.exact, c.estimate, c.stderr, c.deviation(), c.monitoring
                    ),
                );
                checks.push(c);
            }
            let (heights, times) = brownian::sweep_grid();
            let sup = brownian::sweep_sup_bound(&heights, &times)?;
            report.check(sup.pass(), format!("sup bound: max ratio {:.4} at a={} t={:.3}", sup.max_ratio, sup.a, sup.t));
            let ballot = brownian::sweep_ballot_bound(&heights, &times)?;
            report.check(
                ballot.pass(),
                format!("ballot bound: max ratio {:.4} at a={} b={} t={:.3}", ballot.max_ratio, ballot.a, ballot.b, ballot.t),
            );
            let json = to_json(&serde_json::json!({
                "schema": harness::SCHEMA, "kind": cmd.name(), "mc": checks,
                "sup_sweep": sup, "ballot_sweep": ballot, "checks": report.lines, "pass": report.pass,
            }))?;
            write_outputs(&out, cmd.name(), cfg, &json, None)?;
        }
        Command::VerifyCovariance => {
            let check = CovarianceCheck {
                kernel: exp.kernel,
                geometry: exp.geometry,
                t: exp.t,
                layer_width: exp.layer_width,
                grid_size: exp.grid_size,
                replicas: exp.replicas,
                lags: cfg.covariance.lags,
                min_offset: cfg.covariance.min_offset,
                seed: exp.seed,
                workers: exp.workers,
            };
            let rows = covariance_fidelity(&check)?;
            for r in &rows {
                report.check(
                    r.pass(),
                    format!("lag {} (gap {:.5}): empirical {:.5} se {:.2e} exact {:.5}", r.offset, r.gap, r.empirical, r.stderr, r.exact),
                );
            }
            let json = to_json(&serde_json::json!({
                "schema": harness::SCHEMA, "kind": cmd.name(), "settings": check, "rows": rows,
                "checks": report.lines, "pass": report.pass,
            }))?;
            write_outputs(&out, cmd.name(), cfg, &json, None)?;
        }
        Command::SecondMoment => {
            let (result, table) = run_second_moment(&exp)?;
            for r in &table {
                report.check(
                    r.pass(),
                    format!("n={}: mc {:.6} se {:.2e} exact {:.6} z {:+.2}", r.n, r.mc_mean, r.mc_stderr, r.exact, r.z),
                );
            }
            let json = experiment_json(&result, &table, &report)?;
            write_outputs(&out, cmd.name(), cfg, &json, Some(&result.csv()))?;
        }
        Command::Tightness => {
            let (result, sums) = run_tightness_experiment(&exp)?;
            for s in &sums {
                report.info(format!(
                    "n={}: good {:.3} E[|c|^2;good] {:.4e} q90 {}",
                    s.n,
                    s.good_frequency,
                    s.mean_sq_good,
                    s.quantiles_good.as_ref().map_or("-".into(), |q| format!("{:.4}", q.q90))
                ));
            }
            let diag = tightness_diagnostics(&sums);
            match &diag {
                Ok(d) => {
                    report.check(
                        (-3.0..=-1.0).contains(&d.decay_slope),
                        format!("decay slope vs log log n {:.3} (se {:.3}) in [-3, -1]", d.decay_slope, d.decay_slope_stderr),
                    );
                    report.check(d.scaled_moment_ratio < 5.0, format!("(log n)^2 E[|c|^2;good] spread x{:.3} < 5", d.scaled_moment_ratio));
                    report.check(d.q90_ratio < 3.0, format!("q90 of (log n)|c_n| spread x{:.3} < 3", d.q90_ratio));
                    report.check(d.q90_spearman.abs() < 0.8, format!("|spearman(q90, n)| {:.3} < 0.8", d.q90_spearman.abs()));
                }
                Err(e) => report.check(false, format!("diagnostics unavailable: {e}")),
            }
            let summary = serde_json::json!({ "per_n": sums, "diagnostics": diag.ok() });
            let json = experiment_json(&result, &summary, &report)?;
            write_outputs(&out, cmd.name(), cfg, &json, Some(&result.csv()))?;
        }
        Command::Conjecture => {
            let (result, sums) = run_conjecture_experiment(&exp)?;
            for s in &sums {
                report.info(format!(
                    "n={}: median {:.4} q90 {:.4} (exponents log {:.5}, n {:.5})",
                    s.n, s.quantiles.q50, s.quantiles.q90, s.log_exponent, s.n_exponent
                ));
            }
            let spread = median_spread(&sums);
            report.check(spread < 10.0, format!("median spread x{spread:.3} < 10"));
            let json = experiment_json(&result, &sums, &report)?;
            write_outputs(&out, cmd.name(), cfg, &json, Some(&result.csv()))?;
        }
        Command::ScaleDecomp => {
            let dec = run_scale_decomposition(&exp, &DEFAULT_BAND_EDGES)?;
            for (n, total) in &dec.totals {
                report.info(format!("n={n}: total pair energy {total:.4e}"));
            }
            for (n, f) in &dec.tail_fraction {
                report.info(format!("n={n}: fraction from a >= log log n {f:.4}"));
            }
            let json = to_json(&serde_json::json!({
                "schema": harness::SCHEMA, "kind": cmd.name(), "config": exp, "decomposition": dec,
                "checks": report.lines, "pass": report.pass,
            }))?;
            write_outputs(&out, cmd.name(), cfg, &json, None)?;
        }
        Command::FboundSweep => {
            let fb = cfg.fbound();
            let rep = run_fbound_sweep(&exp.covariance(), &fb)?;
            if rep.calibrated {
                report.info(format!("C calibrated by pilot: {:.6e}", rep.c));
            } else {
                report.info(format!("C fixed by config: {:.6e}", rep.c));
            }
            for (row, ok) in rep.rows.iter().zip(&rep.covered) {
                report.check(
                    *ok,
                    format!(
                        "gap {:.4e} (r_gap {:.3}): F {:.4e} se {:.2e} bound {:.4e}{}",
                        row.gap,
                        row.r_delta,
                        row.estimate,
                        row.stderr,
                        row.bound(rep.c),
                        if row.unstable { " [unstable: few good paths]" } else { "" }
                    ),
                );
            }
            match rep.slope {
                Some((b, se, k)) => report.check(
                    rep.slope_pass(),
                    format!(
                        "slope of log(gap F) vs log separation over [{:.3}, {:.3}]: {b:.3} (se {se:.3}, {k} points) in [{}, {}]",
                        rep.slope_window.0, rep.slope_window.1, SLOPE_RANGE.0, SLOPE_RANGE.1
                    ),
                ),
                None => report.check(false, "slope: fewer than 3 gaps in the separation window".into()),
            }
            if let Some((b, _, _)) = rep.shape_slope {
                report.info(format!("slope of the bound itself over the same window: {b:.3}"));
            }
            let json = to_json(&serde_json::json!({
                "schema": harness::SCHEMA, "kind": cmd.name(), "settings": fb, "report": rep,
                "checks": report.lines, "pass": report.pass,
            }))?;
            write_outputs(&out, cmd.name(), cfg, &json, None)?;
        }
    }
    Ok(report)
}

/// Full program: config resolution, dispatch, printing; returns the exit
/// status.
pub fn run(cli: &Cli, env_seed: Option<&str>) -> i32 {
    let cfg = match effective_config(cli, env_seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gmcf: {e}");
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command, &cfg) {
        Ok(report) => {
            for l in &report.lines {
                println!("{l}");
            }
            if report.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("gmcf {}: {e}", cli.command.name());
            EXIT_USAGE
        }
    }
}
