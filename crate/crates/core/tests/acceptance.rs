//! Acceptance suite: ten end-to-end checks covering convergence orders,
//! per-step volume preservation, the determinant/condition equivalence,
//! finite-difference validation of the closed-form step Jacobian, the
//! embedding equivalences of the structured steppers, explicitness and
//! iteration counts, exact volume contraction on the damped problem, and
//! ordinal accuracy comparisons against non-exponential reruns.
//!
//! Each check prints one `ACCEPTANCE <nn> <name>: PASS` line (visible with
//! `--nocapture`); failures panic with the measured values.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpflow::integrators::{
    integrate, AdaptedEiStepper, ErknStepper, OneStepMethod, RkStepper, RknStepper, SolverConfig,
    SseiStepper, Trajectory,
};
use vpflow::problems::{
    benchmark, charged_particle, charged_particle_b0, charged_particle_embedded,
    cubic_oscillator_1d, divergence_free_3d, duffing, duffing_partitioned, helmholtz_duffing,
    reference_solution, relative_global_error, synthetic_f_infinity, ReferenceQuality,
};
use vpflow::tableau::{equal_node_two_stage, gauss_legendre, ButcherTableau};
use vpflow::vpcheck::{step_jacobian, volume_drift, volume_ratio, vp_condition_residual};
use vpflow::VectorFieldProblem;

fn gauss1() -> ButcherTableau {
    gauss_legendre(1).unwrap()
}

fn gauss2() -> ButcherTableau {
    gauss_legendre(2).unwrap()
}

fn run_ssei(p: &VectorFieldProblem, t: &ButcherTableau, h: f64, y0: &[f64], t_end: f64) -> Trajectory {
    let stepper = SseiStepper::new(p.clone(), t.clone(), SolverConfig::new(h)).unwrap();
    integrate(&stepper, y0, t_end).unwrap_or_else(|e| panic!("{}: {}", p.name, e.error))
}

/// Least-squares slope of log(err) against log(h).
fn fitted_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    let num: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    num / den
}

/// Endpoint relative error of a stepper run; infinite when the run aborts.
fn rge_or_inf(stepper: &dyn OneStepMethod, y0: &[f64], t_end: f64, y_ref: &[f64]) -> f64 {
    match integrate(stepper, y0, t_end) {
        Ok(traj) => relative_global_error(traj.final_state(), y_ref),
        Err(_) => f64::INFINITY,
    }
}

#[test]
fn a01_convergence_orders_on_the_elliptic_benchmark() {
    let start = Instant::now();
    let p = duffing();
    let y0 = vec![0.0, 20.0];
    let t_end = 10.0;
    let y_ref = p.exact.as_ref().unwrap()(t_end);
    let hs: Vec<f64> = (1..=4).map(|i| 0.1 / f64::powi(2.0, i)).collect();
    let mut slopes = Vec::new();
    for (t, expected) in [(gauss1(), 2.0), (gauss2(), 4.0)] {
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let traj = run_ssei(&p, &t, h, &y0, t_end);
                relative_global_error(traj.final_state(), &y_ref)
            })
            .collect();
        let slope = fitted_slope(&hs, &errs);
        assert!(
            (slope - expected).abs() <= 0.25,
            "observed order {slope:.3}, expected {expected}±0.25 (errors {errs:?})"
        );
        slopes.push(slope);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}, budget 10 s");
    println!(
        "ACCEPTANCE 01 convergence-orders: PASS (slopes {:.3}, {:.3}; {elapsed:?})",
        slopes[0], slopes[1]
    );
}

#[test]
fn a02_per_step_volume_preservation_across_step_sizes() {
    let start = Instant::now();
    let p = duffing();
    let y0 = vec![0.0, 20.0];
    let mut worst_det = 0.0_f64;
    let mut worst_drift = 0.0_f64;
    for t in [gauss1(), gauss2()] {
        for h in [0.5, 0.1, 0.02, 0.005] {
            let cfg = SolverConfig::new(h);
            let traj = run_ssei(&p, &t, h, &y0, 100.0);
            assert_eq!(traj.nonconverged_steps, 0, "h={h}: stages must converge");
            let report = volume_drift(&traj, &p, &t, &cfg).unwrap();
            assert!(
                report.max_abs_det_minus_one <= 1e-9,
                "{}-stage, h={h}: max |det−1| = {:e}",
                t.stages(),
                report.max_abs_det_minus_one
            );
            assert!(
                report.cumulative_log_drift.abs() <= 1e-6,
                "{}-stage, h={h}: cumulative log drift = {:e}",
                t.stages(),
                report.cumulative_log_drift
            );
            worst_det = worst_det.max(report.max_abs_det_minus_one);
            worst_drift = worst_drift.max(report.cumulative_log_drift.abs());
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60 s");
    println!(
        "ACCEPTANCE 02 long-run-volume: PASS (worst |det−1| {worst_det:.2e}, worst drift {worst_drift:.2e}; {elapsed:?})"
    );
}

#[test]
fn a03_stiff_3d_volume_with_equal_and_distinct_nodes() {
    let p = divergence_free_3d();
    let y0 = vec![0.5, 0.5, 0.5];
    let h = 0.01;
    let cfg = SolverConfig::new(h);
    let mut preserved = Vec::new();
    for t in [gauss1(), equal_node_two_stage()] {
        let traj = run_ssei(&p, &t, h, &y0, 100.0);
        assert_eq!(traj.nonconverged_steps, 0);
        let report = volume_drift(&traj, &p, &t, &cfg).unwrap();
        assert!(
            report.max_abs_det_minus_one <= 1e-9,
            "{}-stage (equal nodes: {}): max |det−1| = {:e}",
            t.stages(),
            t.has_equal_nodes(),
            report.max_abs_det_minus_one
        );
        preserved.push(report.max_abs_det_minus_one);
    }
    // Distinct-node two-stage run: report-only, no preservation is claimed.
    let t = gauss2();
    let traj = run_ssei(&p, &t, h, &y0, 100.0);
    let report = volume_drift(&traj, &p, &t, &cfg).unwrap();
    println!(
        "ACCEPTANCE 03 stiff-3d-volume: PASS (one-stage {:.2e}, equal-node {:.2e}; distinct-node report-only max |det−1| = {:.3e})",
        preserved[0], preserved[1], report.max_abs_det_minus_one
    );
}

#[test]
fn a04_condition_residual_matches_determinant_verdict() {
    let problems = [duffing(), divergence_free_3d(), synthetic_f_infinity(2, 2, 42)];
    let initials: [&[f64]; 3] = [&[0.0, 20.0], &[0.5, 0.5, 0.5], &[0.4, -0.3, 0.2, 0.5]];
    let tableaux = [gauss1(), gauss2(), equal_node_two_stage()];
    let hs = [0.02, 0.05, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut disagreements = 0usize;
    let mut band_margin = f64::INFINITY;
    for i in 0..200 {
        let pi = i % 3;
        let p = &problems[pi];
        let t = &tableaux[(i / 3) % 3];
        let h = hs[(i / 9) % 3];
        let cfg = SolverConfig::new(h);
        let y: Vec<f64> = initials[pi]
            .iter()
            .map(|v| v + rng.gen_range(-0.3..0.3))
            .collect();
        let det = volume_ratio(p, t, &cfg, &y).unwrap();
        let res = vp_condition_residual(p, t, &cfg, &y).unwrap();
        let res_small = res.abs() <= 1e-10;
        let det_small = (det - 1.0).abs() <= 1e-10;
        if res_small != det_small {
            disagreements += 1;
            eprintln!(
                "disagreement: {} {}-stage h={h}: residual {res:e}, det−1 {:e}",
                p.name,
                t.stages(),
                det - 1.0
            );
        }
        // Distance of each diagnostic from the 1e−10 threshold, in decades.
        for v in [res.abs(), (det - 1.0).abs()] {
            if v > 0.0 {
                band_margin = band_margin.min((v.log10() - (-10.0)).abs());
            }
        }
    }
    assert_eq!(disagreements, 0, "{disagreements} of 200 triples disagree");
    println!(
        "ACCEPTANCE 04 residual-determinant-equivalence: PASS (200 triples, 0 disagreements, nearest threshold margin {band_margin:.1} decades)"
    );
}

#[test]
fn a05_step_jacobian_agrees_with_finite_differences() {
    let t = gauss2();
    let h = 0.01;
    let cfg = SolverConfig::new(h);
    let mut worst_fd = 0.0_f64;
    let mut worst_det = 0.0_f64;
    for name in ["duffing", "divfree3d", "helmholtz", "charged-particle"] {
        let b = benchmark(name).unwrap();
        let p = &b.first_order;
        let y = &b.initial;
        let jac = step_jacobian(p, &t, &cfg, y).unwrap();
        let stepper = SseiStepper::new(p.clone(), t.clone(), cfg.clone()).unwrap();
        let eps = 1e-5;
        for col in 0..p.dim {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[col] += eps;
            ym[col] -= eps;
            let fp = stepper.step(&yp).unwrap().y_next;
            let fm = stepper.step(&ym).unwrap().y_next;
            for row in 0..p.dim {
                let fd = (fp[row] - fm[row]) / (2.0 * eps);
                let diff = (jac[(row, col)] - fd).abs() / jac[(row, col)].abs().max(1.0);
                assert!(
                    diff <= 1e-5,
                    "{name} ({row},{col}): closed form {} vs finite difference {fd}",
                    jac[(row, col)]
                );
                worst_fd = worst_fd.max(diff);
            }
        }
        let det = jac.det();
        let ratio = volume_ratio(p, &t, &cfg, y).unwrap();
        let det_diff = (det - ratio).abs() / ratio.abs().max(1.0);
        assert!(
            det_diff <= 1e-11,
            "{name}: det of closed form {det:e} vs determinant ratio {ratio:e}"
        );
        worst_det = worst_det.max(det_diff);
    }
    println!(
        "ACCEPTANCE 05 jacobian-validation: PASS (worst FD gap {worst_fd:.2e}, worst det gap {worst_det:.2e})"
    );
}

#[test]
fn a06_structured_steppers_match_their_embeddings() {
    let t = gauss2();
    let h = 0.01;
    let cfg = SolverConfig::new(h);
    let steps = 100;

    // Damped second-order stepper against the plain exponential stepper on
    // the first-order embedding.
    let second = helmholtz_duffing();
    let embedded = second.embed();
    let adapted = AdaptedEiStepper::new(second, t.clone(), cfg.clone()).unwrap();
    let flat = SseiStepper::new(embedded, t.clone(), cfg.clone()).unwrap();
    let mut worst_adapted = 0.0_f64;
    let mut ya = vec![1.0, 15.199];
    let mut yf = ya.clone();
    for step in 0..steps {
        ya = adapted.step(&ya).unwrap().y_next;
        yf = flat.step(&yf).unwrap().y_next;
        for (a, b) in ya.iter().zip(yf.iter()) {
            let diff = (a - b).abs() / b.abs().max(1.0);
            assert!(diff <= 1e-11, "step {step}: adapted {a} vs embedded {b}");
            worst_adapted = worst_adapted.max(diff);
        }
    }

    // Trigonometric stepper on the oscillatory (q, p) form against the plain
    // exponential stepper on the equivalent first-order problem.
    let erkn = ErknStepper::new(duffing_partitioned(), t.clone(), cfg.clone()).unwrap();
    let flat = SseiStepper::new(duffing(), t.clone(), cfg.clone()).unwrap();
    let mut worst_erkn = 0.0_f64;
    let mut ye = vec![0.0, 20.0];
    let mut yf = ye.clone();
    for step in 0..steps {
        ye = erkn.step(&ye).unwrap().y_next;
        yf = flat.step(&yf).unwrap().y_next;
        for (a, b) in ye.iter().zip(yf.iter()) {
            let diff = (a - b).abs() / b.abs().max(1.0);
            assert!(diff <= 1e-11, "step {step}: trigonometric {a} vs embedded {b}");
            worst_erkn = worst_erkn.max(diff);
        }
    }
    println!(
        "ACCEPTANCE 06 embedding-equivalence: PASS (damped gap {worst_adapted:.2e}, trigonometric gap {worst_erkn:.2e})"
    );
}

#[test]
fn a07_nystrom_steps_preserve_volume_on_separable_problems() {
    let h = 0.05;
    let cfg = SolverConfig::new(h);
    let t_end = 50.0; // 1000 steps
    let mut worst = 0.0_f64;
    for (partitioned, y0) in [
        (cubic_oscillator_1d(), vec![1.0, 0.5]),
        (charged_particle_b0(), vec![0.7, 1.0, 0.1, 0.9, 0.5, 0.4]),
    ] {
        let embedded = partitioned.embed();
        for t in [gauss1(), equal_node_two_stage()] {
            let stepper = RknStepper::new(partitioned.clone(), t.clone(), cfg.clone()).unwrap();
            let traj = integrate(&stepper, &y0, t_end)
                .unwrap_or_else(|e| panic!("{}: {}", partitioned.name, e.error));
            assert_eq!(traj.steps(), 1000);
            assert_eq!(traj.nonconverged_steps, 0);
            let report = volume_drift(&traj, &embedded, &t, &cfg).unwrap();
            assert!(
                report.max_abs_det_minus_one <= 1e-9,
                "{} {}-stage: max |det−1| = {:e}",
                partitioned.name,
                t.stages(),
                report.max_abs_det_minus_one
            );
            worst = worst.max(report.max_abs_det_minus_one);
        }
    }
    println!("ACCEPTANCE 07 nystrom-volume: PASS (worst |det−1| {worst:.2e})");
}

#[test]
fn a08_one_stage_damped_stepper_is_explicit_where_plain_rk_is_not() {
    let h = 0.1;
    let cfg = SolverConfig::new(h);
    let steps = 100;

    let adapted = AdaptedEiStepper::new(charged_particle(), gauss1(), cfg.clone()).unwrap();
    let mut y = vec![0.7, 1.0, 0.1, 0.9, 0.5, 0.4];
    for step in 0..steps {
        let rec = adapted.step(&y).unwrap();
        assert_eq!(
            rec.iterations, 1,
            "step {step}: one-stage damped stepper must be explicit"
        );
        y = rec.y_next;
    }

    let rk = RkStepper::new(charged_particle_embedded(), gauss1(), cfg.clone());
    let mut y = vec![0.7, 1.0, 0.1, 0.9, 0.5, 0.4];
    let mut max_iters = 0usize;
    for step in 0..steps {
        let rec = rk.step(&y).unwrap();
        assert!(
            rec.iterations > 1,
            "step {step}: implicit midpoint cannot settle in one sweep here"
        );
        assert!(rec.converged, "step {step}: stages must converge");
        max_iters = max_iters.max(rec.iterations);
        y = rec.y_next;
    }
    println!(
        "ACCEPTANCE 08 explicitness: PASS (damped stepper 1 sweep/step; plain midpoint up to {max_iters} sweeps)"
    );
}

#[test]
fn a09_damped_problem_contracts_volume_at_the_exact_rate() {
    let h = 0.01;
    let cfg = SolverConfig::new(h);
    let t = gauss1();
    let second = helmholtz_duffing();
    let embedded = second.embed();
    let stepper = AdaptedEiStepper::new(second, t.clone(), cfg.clone()).unwrap();
    let traj = integrate(&stepper, &[1.0, 15.199], 1.0).unwrap();
    assert_eq!(traj.steps(), 100);
    let report = volume_drift(&traj, &embedded, &t, &cfg).unwrap();
    let target = (-0.0002_f64).exp(); // e^{h·trace K} with trace −0.02
    let mut worst = 0.0_f64;
    for (i, det) in report.per_step_det.iter().enumerate() {
        let dev = (det - target).abs();
        assert!(dev <= 1e-11, "step {i}: det {det:.15e} vs target {target:.15e}");
        worst = worst.max(dev);
    }
    println!(
        "ACCEPTANCE 09 exact-contraction: PASS (per-step det within {worst:.2e} of e^(−0.0002))"
    );
}

#[test]
fn a10_exponential_methods_beat_plain_rk_at_coarse_steps() {
    let h = 0.05;
    let cfg = SolverConfig::new(h);
    let t_end = 100.0;

    let duff = duffing();
    let duff_y0 = vec![0.0, 20.0];
    let duff_ref = duff.exact.as_ref().unwrap()(t_end);

    let stiff = divergence_free_3d();
    let stiff_y0 = vec![0.5, 0.5, 0.5];
    let quality = ReferenceQuality {
        experiment_h: h,
        extra_refinements: 6,
    };
    let stiff_ref = reference_solution(&stiff, &stiff_y0, t_end, &quality).unwrap();

    let mut lines = Vec::new();
    for (p, y0, y_ref, label) in [
        (&duff, &duff_y0, &duff_ref, "elliptic"),
        (&stiff, &stiff_y0, &stiff_ref, "stiff-3d"),
    ] {
        for t in [gauss1(), gauss2()] {
            let expo = SseiStepper::new(p.clone(), t.clone(), cfg.clone()).unwrap();
            let rge_expo = rge_or_inf(&expo, y0, t_end, y_ref);
            let plain = RkStepper::new(p.clone(), t.clone(), cfg.clone());
            let rge_plain = rge_or_inf(&plain, y0, t_end, y_ref);
            assert!(
                rge_expo < rge_plain,
                "{label} {}-stage: exponential {rge_expo:e} !< plain {rge_plain:e}",
                t.stages()
            );
            lines.push(format!(
                "{label}/{}-stage {rge_expo:.2e} < {rge_plain:.2e}",
                t.stages()
            ));
        }
    }
    println!("ACCEPTANCE 10 ordinal-accuracy: PASS ({})", lines.join("; "));
}
