//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities. Every tolerance is pinned here, in code.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use quenched_core::birkhoff::CoboundaryVerdict;
use quenched_core::blocks::{
    block_decomposition, default_beta, exact_factorization_error, rate_exponent,
};
use quenched_core::config::{ExperimentConfig, ObservableKind};
use quenched_core::errors::QuenchedError;
use quenched_core::experiment::Experiment;
use quenched_core::inducing::return_times_symbolic;

fn config_text(name: &str) -> String {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    std::fs::read_to_string(format!("{dir}/{name}.toml"))
        .unwrap_or_else(|e| panic!("missing config {name}: {e}"))
}

fn experiment(name: &str) -> Experiment {
    Experiment::from_toml(&config_text(name), None).unwrap()
}

fn experiment_with(name: &str, tweak: impl FnOnce(&mut ExperimentConfig)) -> Experiment {
    let text = config_text(name);
    let mut cfg = ExperimentConfig::from_str(&text).unwrap();
    tweak(&mut cfg);
    cfg.validate().unwrap();
    let hash = quenched_core::config::config_hash(text.as_bytes());
    Experiment::new(cfg, hash, None).unwrap()
}

#[test]
fn criterion_01_affine_analytic_variance_oracle() {
    // Oracle: Green-Kubo sum for the doubling map with the first cosine
    // harmonic; every off-diagonal correlation vanishes exactly and the
    // diagonal is 1/2.
    let exp = experiment_with("doubling", |cfg| {
        cfg.monte_carlo.checkpoints = Some(vec![1 << 12]);
    });
    let started = Instant::now();
    let artifact = exp.run_variance().unwrap();
    let mc_elapsed = started.elapsed();

    let mc = artifact.report.sigma2_mc;
    assert!((mc - 0.5).abs() <= 0.02, "MC sigma2 {mc}");
    assert!(mc_elapsed.as_secs() < 30, "MC took {mc_elapsed:?}");

    let op_started = Instant::now();
    let op = artifact.report.sigma2_op.unwrap();
    assert!((op - 0.5).abs() <= 1e-6, "operator sigma2 {op}");
    assert!(op_started.elapsed().as_secs() < 1);
    assert!(artifact.agreement_at_op_horizon);
    println!(
        "ACCEPTANCE 01 affine-analytic-oracle: PASS (mc {mc:.4} +- {:.4}, op {op:.10}, {mc_elapsed:?})",
        artifact.report.stderr
    );
}

#[test]
fn criterion_02_coboundary_dichotomy() {
    let cob = experiment_with("doubling", |cfg| {
        cfg.observable = ObservableKind::CoboundaryCos;
    });
    let artifact = cob.run_variance().unwrap();
    let var_at_top = artifact.report.checkpoints.last().unwrap();
    assert_eq!(var_at_top.n, 1 << 14);
    assert!(var_at_top.var <= 0.01, "coboundary variance {}", var_at_top.var);
    assert_eq!(artifact.report.verdict, CoboundaryVerdict::CoboundarySuspected);

    let default = experiment("doubling").run_variance().unwrap();
    assert_eq!(default.report.verdict, CoboundaryVerdict::PositiveVariance);
    println!(
        "ACCEPTANCE 02 coboundary-dichotomy: PASS (telescoped var {:.5} at 2^14, default verdict positive-variance)",
        var_at_top.var
    );
}

#[test]
fn criterion_03_contraction_inequality_certification() {
    let started = Instant::now();
    let mut satisfied = 0usize;
    let mut min_slack = f64::INFINITY;
    for name in ["doubling", "two_symbol"] {
        let artifact = experiment(name).run_ly(50, 8, 1.0).unwrap();
        assert!(artifact.all_satisfied, "{name}: violation, min slack {}", artifact.min_slack);
        satisfied += artifact.instances;
        min_slack = min_slack.min(artifact.min_slack);
    }
    let elapsed = started.elapsed();
    assert_eq!(satisfied, 100);
    assert!(min_slack >= 0.0);
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 03 contraction-inequality: PASS (100/100 satisfied, min slack {min_slack:.3e}, {elapsed:?})"
    );
}

#[test]
fn criterion_04_operator_norm_bound() {
    let mut certified = 0usize;
    let mut min_margin = f64::INFINITY;
    for name in ["doubling", "two_symbol"] {
        let artifact = experiment(name).run_ly(50, 8, 1.0).unwrap();
        assert!(artifact.norm_all_certified, "{name}: a cocycle escaped the norm bound");
        certified += artifact.norm_instances;
        min_margin = min_margin.min(artifact.norm_min_margin);
    }
    assert_eq!(certified, 50);
    println!(
        "ACCEPTANCE 04 norm-bound: PASS (50/50 certified, min margin {min_margin:.3e})"
    );
}

#[test]
fn criterion_05_normalized_cocycle_decay() {
    let artifact = experiment("perturbed").run_decay(30).unwrap();
    assert!(!artifact.instant_decay);
    assert!(artifact.lambda_hat > 0.0, "rate {}", artifact.lambda_hat);
    assert!(artifact.r_squared >= 0.9, "fit r2 {}", artifact.r_squared);
    println!(
        "ACCEPTANCE 05 decay-rate: PASS (lambda_hat {:.4}, r2 {:.4})",
        artifact.lambda_hat, artifact.r_squared
    );
}

#[test]
fn criterion_06_equivariance_residuals() {
    let mut worst: f64 = 0.0;
    for name in ["doubling", "perturbed"] {
        let artifact = experiment(name).run_triplet(8).unwrap();
        worst = worst.max(artifact.max_equivariance_residual);
        assert!(
            artifact.max_equivariance_residual <= 1e-5,
            "{name}: residual {}",
            artifact.max_equivariance_residual
        );
    }
    println!("ACCEPTANCE 06 equivariance: PASS (max residual {worst:.3e})");
}

#[test]
fn criterion_07_block_tiling_exactness() {
    let mut feasible = 0usize;
    for n in 1..=20u32 {
        let scheme = match block_decomposition(n, 0.6, 0.1) {
            Ok(s) => s,
            Err(QuenchedError::Infeasible(_)) => continue,
            Err(e) => panic!("unexpected error at level {n}: {e}"),
        };
        feasible += 1;
        let mut cursor = scheme.window_start();
        for tile in &scheme.tiles {
            assert_eq!(tile.start, cursor, "level {n}: tiles must be ordered and disjoint");
            assert!(tile.len > 0);
            cursor += tile.len;
        }
        assert_eq!(cursor, scheme.window_end(), "level {n}: tiles must sum to 2^n");
    }
    assert!(feasible >= 10);

    let worked = block_decomposition(10, 0.6, 0.1).unwrap();
    assert_eq!(worked.f, 6);
    assert_eq!(worked.block_count, 64);
    assert_eq!(worked.interval_len, 8);
    assert_eq!(worked.j0_len, 128);
    println!(
        "ACCEPTANCE 07 block-tiling: PASS ({feasible} feasible levels <= 20 exact; n=10 gives f=6 F=64 |I|=8 |J0|=128)"
    );
}

#[test]
fn criterion_08_rate_arithmetic() {
    let a6 = rate_exponent(6.0).unwrap();
    assert!((a6 - (6.0 / 20.0 + 1.0 / 6.0)).abs() <= 1e-9, "a_6 = {a6}");
    let a12 = rate_exponent(12.0).unwrap();
    assert!((a12 - (12.0 / 44.0 + 1.0 / 12.0)).abs() <= 1e-9, "a_12 = {a12}");
    assert!((default_beta(6.0).unwrap() - 0.6).abs() <= 1e-12);

    let ps = [6.0, 8.0, 12.0, 24.0, 100.0];
    for w in ps.windows(2) {
        assert!(rate_exponent(w[1]).unwrap() < rate_exponent(w[0]).unwrap());
        assert!(default_beta(w[1]).unwrap() < default_beta(w[0]).unwrap());
        assert!(rate_exponent(w[1]).unwrap() > 0.25);
        assert!(default_beta(w[1]).unwrap() > 0.5);
    }
    println!("ACCEPTANCE 08 rate-arithmetic: PASS (a_6 = {a6:.5}, a_12 = {a12:.5}, beta_6 = 0.6)");
}

#[test]
fn criterion_09_clt_normality() {
    let started = Instant::now();
    let exp = experiment("doubling");
    assert_eq!(exp.cfg.asip.n_traj, 10_000);
    let artifact = exp.run_asip().unwrap();
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");

    let ks = artifact.clt_ks_values();
    let at = |n: usize| ks.iter().find(|(m, _)| *m == n).map(|(_, k)| *k).unwrap();
    assert!(at(1 << 12) <= 0.02, "KS at 2^12: {}", at(1 << 12));
    // Nonincreasing within a +-0.01 band along the dyadic grid 2^8..2^12.
    let band: Vec<f64> = (8..=12).map(|e| at(1 << e)).collect();
    for w in band.windows(2) {
        assert!(w[1] <= w[0] + 0.01, "KS not nonincreasing within band: {band:?}");
    }
    println!(
        "ACCEPTANCE 09 clt-normality: PASS (KS at 2^8..2^12 = {:?}, {elapsed:?})",
        band.iter().map(|k| (k * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
}

#[test]
fn criterion_10_gap_factorization_decay() {
    let exp = experiment("two_symbol");
    let artifact = exp.run_hprobe(200_000).unwrap();
    let report = &artifact.report;
    assert!(report.c_hat > 0.0, "decay rate {}", report.c_hat);
    assert!(report.r_squared >= 0.8, "fit r2 {}", report.r_squared);
    assert!(report.pass);
    assert!(!report.widened_confidence, "needed noise-dominated points");

    // Dual route: the Monte Carlo errors must match the exact twisted
    // cocycle evaluation within their own noise.
    let spec = exp.hprobe_spec();
    let sys = return_times_symbolic(
        exp.dynamics.path(),
        exp.cfg.inducing.test_mode_window,
        exp.cfg.inducing.test_mode_symbol,
        600,
    );
    let horizon = sys.m((spec.post_edges.last().unwrap() + 16) as usize) + 1;
    let stack = exp.build_stack(horizon).unwrap();
    let obs = quenched_core::birkhoff::center_observable(
        exp.cfg.observable.into(),
        &stack,
        horizon + 1,
    )
    .unwrap();
    for point in &report.points {
        let exact = exact_factorization_error(&stack, &obs, &sys, &spec, point.k).unwrap();
        assert!(
            (point.error - exact).abs() <= 4.0 * point.stderr + 1e-4,
            "k={}: mc {} vs exact {exact}",
            point.k,
            point.error
        );
    }
    println!(
        "ACCEPTANCE 10 gap-factorization: PASS (c_hat {:.3}, r2 {:.4}, {} significant points, oracle-matched)",
        report.c_hat, report.r_squared, report.significant_points
    );
}

#[test]
fn criterion_11_inducing_consistency() {
    let artifact = experiment("two_symbol").run_induce().unwrap();
    let kac = &artifact.kac;
    assert!(
        kac.deviation_m <= 0.1 * kac.inv_p_hat,
        "Kac deviation {} vs {}",
        kac.deviation_m,
        0.1 * kac.inv_p_hat
    );
    assert!(
        artifact.resummation_max_residual <= 1e-9,
        "resummation residual {}",
        artifact.resummation_max_residual
    );
    assert!(
        artifact.go1.ok,
        "u_hat {} below a quarter of sigma2 {}",
        artifact.go1.u_hat,
        artifact.sigma2_floor_reference
    );
    println!(
        "ACCEPTANCE 11 inducing-consistency: PASS (m_n/n {:.4} vs 1/P {:.4}, resummation {:.2e}, u_hat {:.3} >= {:.3})",
        kac.m_n_over_n,
        kac.inv_p_hat,
        artifact.resummation_max_residual,
        artifact.go1.u_hat,
        0.25 * artifact.sigma2_floor_reference
    );
}

#[test]
fn criterion_12_gaussian_surrogate_variance_match() {
    let artifact = experiment("coupled").run_asip().unwrap();
    let vm = artifact.variance_match.as_ref().expect("estimator gate passed");
    assert!(
        (vm.final_ratio - 1.0).abs() <= 0.05,
        "sigma ratio at 2^14: {}",
        vm.final_ratio
    );
    let bound = rate_exponent(6.0).unwrap() + 0.05 + 0.1;
    assert!((vm.exponent_bound - bound).abs() < 1e-12);
    assert!(
        vm.discrepancy_exponent <= bound,
        "discrepancy exponent {} > {bound}",
        vm.discrepancy_exponent
    );
    // The ratio approaches 1 from the first to the last level.
    let first = &vm.checkpoints[0];
    let last = vm.checkpoints.last().unwrap();
    let dev_first = (first.sigma_surr / first.sigma_emp - 1.0).abs();
    let dev_last = (last.sigma_surr / last.sigma_emp - 1.0).abs();
    assert!(dev_last <= dev_first, "ratio deviation grew: {dev_first} -> {dev_last}");
    println!(
        "ACCEPTANCE 12 variance-matching: PASS (ratio {:.4} at 2^14, exponent {:.3} <= {bound:.3})",
        vm.final_ratio, vm.discrepancy_exponent
    );
}
