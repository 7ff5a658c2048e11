//! Acceptance suite. Prints one PASS/FAIL line per criterion followed by
//! indented detail lines. Red criteria are reported, not hidden: the
//! process exits 0 so the rest of the workspace tests still run, and the
//! final line counts the passes.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::time::{Duration, Instant};

use gmcf_core::brownian::{self, check_against_mc, reference_events, Monitoring};
use gmcf_core::harness::{
    covariance_fidelity, median_spread, run_conjecture_experiment, run_second_moment, run_tightness_experiment,
    tightness_diagnostics, total_mass_check, CovarianceCheck, ExperimentConfig,
};
use gmcf_core::kernel::{CircleGeometry, KernelName, ScaleCovariance};
use gmcf_core::twopoint::{run_fbound_sweep, FBoundSweepConfig, SLOPE_RANGE};
use gmcf_core::{kernel::verify_estimates, Result};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn info(&mut self, line: String) {
        self.details.push(format!("info {line}"));
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn run(id: u32, name: &str, limit: Option<Duration>, body: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let mut out = body().unwrap_or_else(|e| {
        let mut o = Outcome::new();
        o.check(false, format!("error: {e}"));
        o
    });
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        out.check(
            elapsed <= limit,
            format!("runtime {:.1}s within {}s", elapsed.as_secs_f64(), limit.as_secs()),
        );
    }
    println!(
        "{} [{id}] {name} ({:.1}s)",
        if out.pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    for d in &out.details {
        println!("    {d}");
    }
    out.pass
}

fn covariance() -> Result<Outcome> {
    let check = CovarianceCheck {
        kernel: KernelName::Triangle,
        geometry: CircleGeometry::Arc,
        t: 6.0,
        layer_width: 0.25,
        grid_size: 4096,
        replicas: 20_000,
        lags: 20,
        min_offset: 10,
        seed: SEED,
        workers: None,
    };
    let mut o = Outcome::new();
    for r in covariance_fidelity(&check)? {
        o.check(
            r.pass(),
            format!(
                "offset {:4} gap {:.5}: empirical {:.5} exact {:.5} |z| {:.2}",
                r.offset,
                r.gap,
                r.empirical,
                r.exact,
                ((r.empirical - r.exact) / r.stderr).abs()
            ),
        );
    }
    Ok(o)
}

fn kernel_estimates() -> Result<Outcome> {
    let r_list: Vec<f64> = (1..=12).map(f64::from).collect();
    let mut o = Outcome::new();
    for cov in [ScaleCovariance::triangle(), ScaleCovariance::bspline3()] {
        let rep = verify_estimates(&cov, &r_list)?;
        let worst = rep
            .rows
            .iter()
            .map(|r| r.variance_deviation.max(r.layer_deviation))
            .fold(0.0, f64::max);
        o.check(
            rep.pass(),
            format!("{}: worst deviation {worst:.4} <= bound {:.4} over r = 1..12", rep.kernel, rep.bound),
        );
    }
    Ok(o)
}

fn brownian_suite() -> Result<Outcome> {
    let mut o = Outcome::new();
    for (name, ev) in reference_events() {
        let c = check_against_mc(name, &ev, 1e-3, 1_000_000, SEED, Monitoring::BridgeCorrected)?;
        o.check(
            c.pass(),
            format!(
                "{name}: exact {:.5} mc {:.5} se {:.1e} |dev| {:.2e} <= {:.2e}",
                c.exact,
                c.estimate,
                c.stderr,
                c.deviation(),
                4.0 * c.stderr + brownian::BIAS_ALLOWANCE
            ),
        );
    }
    let (name, ev) = reference_events()[2];
    let d = check_against_mc(name, &ev, 1e-3, 1_000_000, SEED, Monitoring::Discrete)?;
    o.info(format!(
        "{name} with plain discrete monitoring: mc {:.5}, |dev| {:.2e}",
        d.estimate,
        d.deviation()
    ));
    let (heights, times) = brownian::sweep_grid();
    let sup = brownian::sweep_sup_bound(&heights, &times)?;
    o.check(
        sup.pass(),
        format!("sup bound with constant 3: max ratio {:.4} at a={} t={:.1}", sup.max_ratio, sup.a, sup.t),
    );
    let ballot = brownian::sweep_ballot_bound(&heights, &times)?;
    o.check(
        ballot.pass(),
        format!(
            "ballot bound with constant 3: max ratio {:.4} at a={} b={} t={:.1}",
            ballot.max_ratio, ballot.a, ballot.b, ballot.t
        ),
    );
    Ok(o)
}

fn total_mass() -> Result<Outcome> {
    let mut o = Outcome::new();
    for (gamma, expect) in [(1.0, 1.0), (SQRT_2, SQRT_2)] {
        let cfg = ExperimentConfig {
            gamma,
            t: 2.0,
            grid_size: 1024,
            n_list: vec![1],
            replicas: 100_000,
            seed: SEED,
            ..Default::default()
        };
        let (mean, se) = total_mass_check(&cfg)?;
        o.check(
            (mean - expect).abs() <= 4.0 * se,
            format!("gamma {gamma:.4}: mean mass {mean:.5} se {se:.1e} target {expect:.5}"),
        );
    }
    Ok(o)
}

fn second_moment_config() -> ExperimentConfig {
    ExperimentConfig {
        t: 2.0,
        grid_size: 4096,
        n_list: vec![1, 4, 16, 64],
        replicas: 100_000,
        seed: SEED,
        ..Default::default()
    }
}

fn second_moment(csv: &mut String) -> Result<Outcome> {
    let (result, table) = run_second_moment(&second_moment_config())?;
    *csv = result.csv();
    let mut o = Outcome::new();
    for r in table {
        o.check(
            r.pass(),
            format!("n={:2}: mc {:.6} se {:.1e} exact {:.6} z {:+.2}", r.n, r.mc_mean, r.mc_stderr, r.exact, r.z),
        );
    }
    Ok(o)
}

fn tightness(o6: &mut Outcome, o7: &mut Outcome) -> Result<()> {
    let cfg = ExperimentConfig {
        seed: SEED,
        ..Default::default()
    };
    let (_, sums) = run_tightness_experiment(&cfg)?;
    for s in &sums {
        let q90 = s.quantiles_good.as_ref().map(|q| q.q90);
        let line = format!(
            "n={:3}: good {:.3} E[|c|^2;good] {:.4e} q90 of (log n)|c| {}",
            s.n,
            s.good_frequency,
            s.mean_sq_good,
            q90.map_or("-".into(), |q| format!("{q:.4}"))
        );
        o6.info(line.clone());
        o7.info(line);
    }
    let d = tightness_diagnostics(&sums)?;
    o6.check(
        (-3.0..=-1.0).contains(&d.decay_slope),
        format!(
            "slope of log E[|c|^2;good] vs log log n: {:.3} (se {:.3}) in [-3, -1]",
            d.decay_slope, d.decay_slope_stderr
        ),
    );
    o6.check(
        d.scaled_moment_ratio < 5.0,
        format!("(log n)^2 E[|c|^2;good] spread x{:.3} < 5", d.scaled_moment_ratio),
    );
    o7.check(d.q90_ratio < 3.0, format!("q90 spread x{:.3} < 3", d.q90_ratio));
    o7.check(
        d.q90_spearman.abs() < 0.8,
        format!("|spearman(q90, n)| {:.3} < 0.8", d.q90_spearman.abs()),
    );
    Ok(())
}

fn two_point_bound() -> Result<Outcome> {
    let cfg = FBoundSweepConfig {
        t: 12.0,
        n: 256,
        delta: 0.2,
        a: 8.0,
        gaps: 20,
        dt: 0.01,
        replicas: 100_000,
        pilot_replicas: 100_000,
        pilot_stride: 3,
        c: None,
        seed: SEED,
    };
    let rep = run_fbound_sweep(&ScaleCovariance::triangle(), &cfg)?;
    let mut o = Outcome::new();
    o.info(format!("C calibrated by pilot on an independent stream: {:.4e}", rep.c));
    for (row, ok) in rep.rows.iter().zip(&rep.covered) {
        o.check(
            *ok,
            format!(
                "gap {:.3e} (r_gap {:5.2}): F {:.3e} se {:.1e} bound {:.3e}{}",
                row.gap,
                row.r_delta,
                row.estimate,
                row.stderr,
                row.bound(rep.c),
                if row.unstable { " [few good paths]" } else { "" }
            ),
        );
    }
    match rep.slope {
        Some((b, se, k)) => o.check(
            rep.slope_pass(),
            format!(
                "slope of log(gap F) vs log(r_gap - r_n) over [{:.2}, {:.2}]: {b:.3} (se {se:.3}, {k} points) in [{}, {}]",
                rep.slope_window.0, rep.slope_window.1, SLOPE_RANGE.0, SLOPE_RANGE.1
            ),
        ),
        None => o.check(false, "slope: fewer than 3 gaps in the window".into()),
    }
    if let Some((b, _, _)) = rep.shape_slope {
        o.info(format!("slope of the bound itself over the same window: {b:.3}"));
    }
    Ok(o)
}

fn conjecture() -> Result<Outcome> {
    let mut o = Outcome::new();
    for gamma in [FRAC_1_SQRT_2, 1.0] {
        let cfg = ExperimentConfig {
            gamma,
            seed: SEED,
            ..Default::default()
        };
        let (_, sums) = run_conjecture_experiment(&cfg)?;
        let medians: Vec<String> = sums.iter().map(|s| format!("{:.3}", s.quantiles.q50)).collect();
        let spread = median_spread(&sums);
        o.check(
            spread < 10.0,
            format!("gamma {gamma:.4}: medians [{}] spread x{spread:.3} < 10", medians.join(", ")),
        );
    }
    Ok(o)
}

fn determinism(first: &str) -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut cfg = second_moment_config();
    cfg.workers = Some(1);
    let (again, _) = run_second_moment(&cfg)?;
    o.check(
        !first.is_empty() && again.csv() == first,
        format!("second-moment rerun with one worker: {} CSV bytes identical", first.len()),
    );
    let small = ExperimentConfig {
        t: 7.0,
        grid_size: 2048,
        n_list: vec![8, 32, 128],
        replicas: 64,
        seed: SEED,
        ..Default::default()
    };
    let (a, _) = run_tightness_experiment(&ExperimentConfig {
        workers: Some(1),
        ..small.clone()
    })?;
    let (b, _) = run_tightness_experiment(&ExperimentConfig {
        workers: Some(3),
        ..small
    })?;
    o.check(
        a.csv() == b.csv(),
        format!("tightness rerun with 1 and 3 workers: {} CSV bytes identical", a.csv().len()),
    );
    Ok(o)
}

fn main() {
    let mut passed = 0;
    let mut tally = |ok: bool| passed += ok as usize;

    tally(run(1, "covariance fidelity", Some(minutes(5)), covariance));
    tally(run(2, "kernel estimates", Some(minutes(1)), kernel_estimates));
    tally(run(3, "brownian suite", Some(minutes(5)), brownian_suite));
    tally(run(4, "martingale normalizations", Some(minutes(2)), total_mass));
    let mut csv = String::new();
    tally(run(5, "second-moment oracle", Some(minutes(5)), || second_moment(&mut csv)));

    let (mut o6, mut o7) = (Outcome::new(), Outcome::new());
    let start = Instant::now();
    if let Err(e) = tightness(&mut o6, &mut o7) {
        o6.check(false, format!("error: {e}"));
        o7.check(false, format!("error: {e}"));
    }
    let elapsed = start.elapsed();
    o6.check(
        elapsed <= minutes(30),
        format!("runtime {:.1}s within 1800s", elapsed.as_secs_f64()),
    );
    tally(run(6, "good-event decay trend", None, || Ok(o6)));
    tally(run(7, "tightness diagnostic (same run)", None, || Ok(o7)));

    tally(run(8, "two-point bound", Some(minutes(20)), two_point_bound));
    tally(run(9, "conjecture harness smoke", Some(minutes(30)), conjecture));
    tally(run(10, "determinism", None, || determinism(&csv)));

    println!("acceptance: {passed}/10 criteria pass");
}
