//! Monte Carlo checks of the samplers against independent oracles.

use std::f64::consts::SQRT_2;

use gmcf_core::field::{residual_variance, sample_two_point, FieldSampler, SpatialGrid, TimeGrid, TwoPointSampler};
use gmcf_core::gmc::GoodEventParams;
use gmcf_core::kernel::ScaleCovariance;
use gmcf_core::rng::StreamKey;
use gmcf_core::stats::{fit_log_slope, mean_stderr};
use gmcf_core::twopoint::{estimate_f, q_indicator_prob, Sampling};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Triangle seed on the line: `∫_0^t (1 - e^v Δ)_+ dv`.
fn triangle_k(t: f64, gap: f64) -> f64 {
    let top = t.min(-gap.ln()).max(0.0);
    top - gap * (top.exp() - 1.0)
}

fn within(est: f64, se: f64, exact: f64, what: &str) {
    assert!(
        (est - exact).abs() <= 4.0 * se,
        "{what}: estimate {est} (se {se}) vs {exact}"
    );
}

#[test]
fn field_levels_have_independent_increments() {
    let grid = SpatialGrid::new(512).unwrap();
    let tg = TimeGrid::uniform(0.25, 3.0).unwrap();
    let sampler = FieldSampler::new(&ScaleCovariance::triangle(), tg, grid).unwrap();
    let (mut var_t, mut cov_st) = (Vec::new(), Vec::new());
    for r in 0..400 {
        let f = sampler.sample(StreamKey::new(5, r));
        let xs = f.cumulative(4);
        let xt = f.horizon_values();
        var_t.push(xt.iter().map(|x| x * x).sum::<f64>() / 512.0);
        cov_st.push(xs.iter().zip(&xt).map(|(a, b)| a * b).sum::<f64>() / 512.0);
    }
    let (m, se) = mean_stderr(&var_t);
    within(m, se, 3.0, "Var X_t");
    let (m, se) = mean_stderr(&cov_st);
    within(m, se, 1.0, "Cov(X_1, X_t)");
}

#[test]
fn shifted_view_restarts_the_field() {
    let grid = SpatialGrid::new(256).unwrap();
    let tg = TimeGrid::uniform(0.25, 3.0).unwrap();
    let sampler = FieldSampler::new(&ScaleCovariance::triangle(), tg, grid).unwrap();
    let (mut var, mut cross) = (Vec::new(), Vec::new());
    for r in 0..400 {
        let f = sampler.sample(StreamKey::new(6, r));
        let base = f.cumulative(4);
        let view = f.shifted_view(4).unwrap();
        let last = view.steps();
        assert!((view.elapsed(last) - 2.0).abs() < 1e-12);
        let v = view.values(last);
        var.push(v.iter().map(|x| x * x).sum::<f64>() / 256.0);
        cross.push(v.iter().zip(&base).map(|(a, b)| a * b).sum::<f64>() / 256.0);
    }
    let (m, se) = mean_stderr(&var);
    within(m, se, 2.0, "Var of the shifted field");
    let (m, se) = mean_stderr(&cross);
    within(m, se, 0.0, "shifted field against its base");
}

#[test]
fn two_point_paths_match_the_line_covariance() {
    let cov = ScaleCovariance::triangle();
    for gap in [0.3, (-2.5f64).exp()] {
        let sampler = TwoPointSampler::new(&cov, gap, 0.01, 4.0).unwrap();
        assert!((sampler.total_cross() - triangle_k(4.0, gap)).abs() < 1e-9);
        let (mut xx, mut xy, mut mid) = (Vec::new(), Vec::new(), Vec::new());
        for r in 0..20_000 {
            let p = sampler.sample(StreamKey::new(7, r));
            let (x, y) = (p.paths[0][400], p.paths[1][400]);
            xx.push(x * x);
            xy.push(x * y);
            mid.push(p.paths[0][150] * p.paths[1][150]);
        }
        let (m, se) = mean_stderr(&xx);
        within(m, se, 4.0, "two-point variance");
        let (m, se) = mean_stderr(&xy);
        within(m, se, triangle_k(4.0, gap), "two-point covariance");
        let (m, se) = mean_stderr(&mid);
        within(m, se, triangle_k(1.5, gap), "two-point covariance at 1.5");
    }
}

#[test]
fn residual_variance_matches_regression() {
    // Regress X_s(0) on every increment of the path at Δ and compare the
    // residual variance of the least-squares fit.
    let cov = ScaleCovariance::triangle();
    let (gap, s, dt) = ((-4.0f64).exp(), 2.0, 0.01);
    let sampler = TwoPointSampler::new(&cov, gap, dt, 4.0).unwrap();
    let reps = 20_000;
    let steps = sampler.steps().len();
    let mut design = DMatrix::<f64>::zeros(reps, steps);
    let mut y = DVector::<f64>::zeros(reps);
    let at_s = (s / dt).round() as usize;
    for r in 0..reps {
        let p = sampler.sample(StreamKey::new(8, r as u64));
        y[r] = p.paths[0][at_s];
        for j in 0..steps {
            design[(r, j)] = p.paths[1][j + 1] - p.paths[1][j];
        }
    }
    let gram = design.tr_mul(&design);
    let beta = gram.cholesky().expect("positive definite").solve(&design.tr_mul(&y));
    let resid = &y - &design * beta;
    let dof = (reps - steps) as f64;
    let est = resid.norm_squared() / dof;
    let exact = residual_variance(&cov, gap, s).unwrap();
    // Closed form for the triangle: s - ∫_0^s (1 - e^{u} Δ)² du.
    let closed = s - (s - 2.0 * gap * (s.exp() - 1.0) + gap * gap * ((2.0 * s).exp() - 1.0) / 2.0);
    assert!((exact - closed).abs() < 1e-9, "{exact} vs {closed}");
    let se = exact * (2.0 / dof).sqrt();
    within(est, se, exact, "residual variance");
}

#[test]
fn barrier_probability_matches_simulation() {
    // δ log n = 3 needs n = e^15; the nearest integer gives r_n within 1e-7.
    let n = 15f64.exp().round() as u64;
    let gp = GoodEventParams::new(2.0, 0.2, n).unwrap();
    let r_n = gp.r_n;
    let cov = ScaleCovariance::triangle();
    // gap with K_{r_n}(Δ) = 1.5, by bisection on the closed form
    let (mut lo, mut hi) = (1e-6f64, 1.0f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if triangle_k(r_n, mid) > 1.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gap = lo;
    let exact = q_indicator_prob(&cov, &gp, gap).unwrap();
    let h = -SQRT_2 * 1.5 - 1.5 / SQRT_2 * r_n.ln() + 2.0;
    // independent draws from the bivariate normal
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let std = Normal::new(0.0, 1.0).unwrap();
    let rho = 1.5 / r_n;
    let trials = 200_000;
    let hits = (0..trials)
        .filter(|_| {
            let z1: f64 = std.sample(&mut rng);
            let z2: f64 = std.sample(&mut rng);
            let x = r_n.sqrt() * z1;
            let y = r_n.sqrt() * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
            x <= h && y <= h
        })
        .count() as f64;
    let p = hits / trials as f64;
    within(p, (p * (1.0 - p) / trials as f64).sqrt(), exact, "barrier probability");
    // and against the path sampler at the same horizon
    let dt = r_n / 400.0;
    let paths = 20_000u64;
    let hits = (0..paths)
        .filter(|&r| {
            let s = sample_two_point(&cov, gap, dt, r_n, StreamKey::new(12, r)).unwrap();
            s.paths[0][400] <= h && s.paths[1][400] <= h
        })
        .count() as f64;
    let p = hits / paths as f64;
    within(p, (p * (1.0 - p) / paths as f64).sqrt(), exact, "barrier probability from paths");
}

#[test]
fn tilted_and_plain_estimators_agree() {
    let cov = ScaleCovariance::triangle();
    let gp = GoodEventParams::new(2.0, 0.2, 256).unwrap();
    let t = 3.5;
    for gap in [0.05, 0.2] {
        let tilted = estimate_f(&cov, &gp, t, gap, 0.01, 40_000, 13, Sampling::Tilted).unwrap();
        let plain = estimate_f(&cov, &gp, t, gap, 0.01, 200_000, 14, Sampling::Plain).unwrap();
        let se = (tilted.stderr.powi(2) + plain.stderr.powi(2)).sqrt();
        assert!(
            (tilted.estimate - plain.estimate).abs() <= 4.0 * se,
            "gap {gap}: tilted {tilted:?} plain {plain:?}"
        );
    }
}

#[test]
fn log_slope_recovers_synthetic_trend() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut covered = 0;
    for _ in 0..200 {
        let xs: Vec<f64> = (1..=12).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 1.7 * x + noise.sample(&mut rng)).collect();
        let (b, se) = fit_log_slope(&xs, &ys).unwrap();
        // se of an OLS slope: σ / sqrt(Σ (x - x̄)²) with x = 1..12
        let sxx: f64 = (1..=12).map(|i| (i as f64 - 6.5).powi(2)).sum();
        assert!((se / (0.05 / sxx.sqrt()) - 1.0).abs() < 0.6, "se {se}");
        if (b + 1.7).abs() <= 2.0 * se {
            covered += 1;
        }
    }
    assert!(covered >= 170, "{covered}/200 intervals cover the slope");
}
