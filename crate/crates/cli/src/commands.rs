//! Subcommand implementations: run, converge, volume, classify, list.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use vpflow::integrators::{integrate, Trajectory};
use vpflow::problems::{
    benchmark, benchmark_names, reference_solution, relative_global_error, Benchmark,
    ProblemError, ReferenceQuality,
};
use vpflow::vpcheck::{verify_class, volume_drift, CheckError, CERT_RESIDUAL_TOL, VolumeReport};

use crate::certfile;
use crate::registry::{build_cell, builtin_methods, MethodSpec, ASSERT_TOL};
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

fn check_err(e: CheckError) -> CliError {
    CliError::Numerical(format!("volume diagnostics failed: {e}"))
}

/// `h` must align with the `t_end` grid: round(t_end/h)·h = t_end.
pub fn grid_steps(h: f64, t_end: f64) -> Result<usize, CliError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(CliError::Usage(format!("step size must be positive, got {h}")));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(CliError::Usage(format!("t-end must be positive, got {t_end}")));
    }
    let steps = (t_end / h).round();
    if (steps * h - t_end).abs() > 1e-9 * t_end.abs().max(1.0) || steps < 1.0 {
        return Err(CliError::Usage(format!(
            "step size {h} does not divide t-end {t_end}"
        )));
    }
    Ok(steps as usize)
}

pub fn lookup_problem(name: &str) -> Result<Benchmark, CliError> {
    benchmark(name).map_err(|e| CliError::Usage(e.to_string()))
}

/// One executed (method, h) cell: the trajectory (possibly partial), its
/// volume report, and the divergence message if the run aborted.
struct CellOutcome {
    traj: Trajectory,
    report: VolumeReport,
    diverged: Option<String>,
}

fn execute_cell(
    bench: &Benchmark,
    spec: &MethodSpec,
    h: f64,
    t_end: f64,
) -> Result<(CellOutcome, crate::registry::VolumePolicy), CliError> {
    let cell = build_cell(bench, spec, h)?;
    let (traj, diverged) = match integrate(cell.stepper.as_ref(), &bench.initial, t_end) {
        Ok(traj) => (traj, None),
        Err(abort) => {
            let msg = format!(
                "{} {} h={h}: {} after {} accepted steps",
                bench.name,
                spec.name,
                abort.error,
                abort.partial.steps()
            );
            (abort.partial, Some(msg))
        }
    };
    let report = volume_drift(&traj, &cell.check_problem, &cell.tableau, &cell.cfg)
        .map_err(check_err)?;
    Ok((
        CellOutcome {
            traj,
            report,
            diverged,
        },
        cell.policy,
    ))
}

fn write_trajectory(
    path: &Path,
    bench: &Benchmark,
    method: &str,
    h: f64,
    t_end: f64,
    traj: &Trajectory,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!(
        "# trajectory problem={} method={method} h={h:.16e} t_end={t_end:.16e}\n",
        bench.name
    ));
    let dim = traj.states.first().map(|s| s.len()).unwrap_or(0);
    out.push('t');
    for i in 0..dim {
        out.push_str(&format!(",y{i}"));
    }
    out.push('\n');
    for (t, y) in traj.times.iter().zip(traj.states.iter()) {
        out.push_str(&format!("{t:.16e}"));
        for v in y {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn write_volume(
    path: &Path,
    bench: &Benchmark,
    method: &str,
    h: f64,
    t_end: f64,
    report: &VolumeReport,
    policy: &crate::registry::VolumePolicy,
) -> Result<(), CliError> {
    let mut buf: Vec<u8> = Vec::new();
    writeln!(
        buf,
        "# volume problem={} method={method} h={h:.16e} t_end={t_end:.16e}",
        bench.name
    )
    .unwrap();
    writeln!(buf, "# target={:.16e}", policy.target).unwrap();
    match &policy.rule {
        Some(rule) => writeln!(buf, "# rule: {rule}").unwrap(),
        None => writeln!(buf, "# rule: none (report-only)").unwrap(),
    }
    report.write_csv(&mut buf).unwrap();
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

fn max_dev_from_target(report: &VolumeReport, target: f64) -> f64 {
    report
        .per_step_det
        .iter()
        .map(|d| (d - target).abs())
        .fold(0.0_f64, f64::max)
}

fn max_vp_residual(report: &VolumeReport) -> f64 {
    report.vp_residual.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
}

fn cell_file(out_dir: &Path, prefix: &str, problem: &str, method: &str, h: f64) -> PathBuf {
    out_dir.join(format!("{prefix}_{problem}_{method}_h{h}.csv"))
}

/// Endpoint reference for RGE reporting. `Ok(None)` means the reference grid
/// never settled; `run` reports that without failing.
fn endpoint_reference(
    bench: &Benchmark,
    t_end: f64,
    experiment_h: f64,
) -> Result<Option<Vec<f64>>, CliError> {
    let quality = ReferenceQuality::standard(experiment_h);
    match reference_solution(&bench.first_order, &bench.initial, t_end, &quality) {
        Ok(y) => Ok(Some(y)),
        Err(ProblemError::ReferenceUnreliable { .. }) => Ok(None),
        Err(e) => Err(CliError::Numerical(format!("reference integration: {e}"))),
    }
}

pub struct RunSettings {
    pub problem: String,
    pub method: MethodSpec,
    pub h: f64,
    pub t_end: f64,
    pub out_dir: PathBuf,
    pub assert_volume: bool,
}

pub fn cmd_run(s: &RunSettings) -> Result<(), CliError> {
    let bench = lookup_problem(&s.problem)?;
    grid_steps(s.h, s.t_end)?;
    // Fail before touching the filesystem if the cell cannot be built.
    build_cell(&bench, &s.method, s.h)?;
    fs::create_dir_all(&s.out_dir).map_err(|e| io_err(&s.out_dir, e))?;
    let start = Instant::now();
    let (outcome, policy) = execute_cell(&bench, &s.method, s.h, s.t_end)?;

    let traj_path = cell_file(&s.out_dir, "trajectory", bench.name, &s.method.name, s.h);
    write_trajectory(&traj_path, &bench, &s.method.name, s.h, s.t_end, &outcome.traj)?;
    let vol_path = cell_file(&s.out_dir, "volume", bench.name, &s.method.name, s.h);
    write_volume(
        &vol_path,
        &bench,
        &s.method.name,
        s.h,
        s.t_end,
        &outcome.report,
        &policy,
    )?;

    let max_dev = max_dev_from_target(&outcome.report, policy.target);
    let rge = if outcome.diverged.is_some() {
        "inf (diverged)".to_string()
    } else {
        match endpoint_reference(&bench, s.t_end, s.h)? {
            Some(y_ref) => format!(
                "{:.16e}",
                relative_global_error(outcome.traj.final_state(), &y_ref)
            ),
            None => "n/a (reference unreliable)".to_string(),
        }
    };
    println!(
        "run problem={} method={} h={} steps={} nonconverged={} max|det-target|={:.3e} rge={} wall={:.3}s",
        bench.name,
        s.method.name,
        s.h,
        outcome.traj.steps(),
        outcome.traj.nonconverged_steps,
        max_dev,
        rge,
        start.elapsed().as_secs_f64()
    );
    println!("wrote {}", traj_path.display());
    println!("wrote {}", vol_path.display());

    if let Some(msg) = outcome.diverged {
        return Err(CliError::Numerical(msg));
    }
    if s.assert_volume {
        match &policy.rule {
            Some(rule) => {
                if max_dev > ASSERT_TOL {
                    return Err(CliError::Assertion(format!(
                        "max |det − {:.6e}| = {max_dev:.3e} exceeds {ASSERT_TOL:e} ({rule})",
                        policy.target
                    )));
                }
                println!("asserted: max |det - target| = {max_dev:.3e} <= {ASSERT_TOL:e}");
            }
            None => println!("note: no preservation rule applies to this cell; nothing asserted"),
        }
    }
    Ok(())
}

pub struct StudySettings {
    pub problem: String,
    pub methods: Vec<MethodSpec>,
    pub hs: Vec<f64>,
    pub t_end: f64,
    pub out_dir: PathBuf,
    pub assert_volume: bool,
}

/// Check grids and method/problem compatibility before any file is written,
/// so that usage errors leave the output directory untouched.
fn validate_cells(bench: &Benchmark, s: &StudySettings) -> Result<(), CliError> {
    for &h in &s.hs {
        grid_steps(h, s.t_end)?;
        for spec in &s.methods {
            build_cell(bench, spec, h)?;
        }
    }
    Ok(())
}

/// Least-squares slope of log(err) against log(h) over finite samples.
fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    let finite: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| e.is_finite() && *e > 0.0)
        .copied()
        .collect();
    if finite.len() < 2 {
        return None;
    }
    let n = finite.len() as f64;
    let xm = finite.iter().map(|(h, _)| h.ln()).sum::<f64>() / n;
    let ym = finite.iter().map(|(_, e)| e.ln()).sum::<f64>() / n;
    let num: f64 = finite.iter().map(|(h, e)| (h.ln() - xm) * (e.ln() - ym)).sum();
    let den: f64 = finite.iter().map(|(h, _)| (h.ln() - xm) * (h.ln() - xm)).sum();
    Some(num / den)
}

pub fn cmd_converge(s: &StudySettings) -> Result<(), CliError> {
    let bench = lookup_problem(&s.problem)?;
    validate_cells(&bench, s)?;
    fs::create_dir_all(&s.out_dir).map_err(|e| io_err(&s.out_dir, e))?;
    let finest = s.hs.iter().copied().fold(f64::INFINITY, f64::min);
    let quality = ReferenceQuality::standard(finest);
    let y_ref = reference_solution(&bench.first_order, &bench.initial, s.t_end, &quality)
        .map_err(|e| CliError::Numerical(format!("reference: {e}")))?;

    // One worker per (method, h) cell; each cell is independent.
    let cells: Vec<(usize, usize)> = (0..s.methods.len())
        .flat_map(|m| (0..s.hs.len()).map(move |h| (m, h)))
        .collect();
    let mut rge = vec![vec![f64::NAN; s.hs.len()]; s.methods.len()];
    let mut failures: Vec<CliError> = Vec::new();
    {
        let mut results: Vec<Option<Result<f64, CliError>>> = (0..cells.len()).map(|_| None).collect();
        let bench_ref = &bench;
        let y_ref_ref = &y_ref;
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (idx, &(mi, hi)) in cells.iter().enumerate() {
                let spec = &s.methods[mi];
                let h = s.hs[hi];
                let t_end = s.t_end;
                handles.push((
                    idx,
                    scope.spawn(move || -> Result<f64, CliError> {
                        let cell = build_cell(bench_ref, spec, h)?;
                        match integrate(cell.stepper.as_ref(), &bench_ref.initial, t_end) {
                            Ok(traj) => {
                                Ok(relative_global_error(traj.final_state(), y_ref_ref))
                            }
                            Err(_) => Ok(f64::INFINITY),
                        }
                    }),
                ));
            }
            for (idx, handle) in handles {
                results[idx] = Some(handle.join().unwrap_or_else(|_| {
                    Err(CliError::Numerical("study worker panicked".into()))
                }));
            }
        });
        for (idx, &(mi, hi)) in cells.iter().enumerate() {
            match results[idx].take().unwrap() {
                Ok(v) => rge[mi][hi] = v,
                Err(e) => failures.push(e),
            }
        }
    }
    if let Some(e) = failures.into_iter().next() {
        return Err(e);
    }

    let path = s.out_dir.join(format!("converge_{}.csv", bench.name));
    let mut out = String::new();
    out.push_str(&format!(
        "# convergence study problem={} t_end={:.16e} reference=endpoint\n",
        bench.name, s.t_end
    ));
    out.push('h');
    for spec in &s.methods {
        out.push_str(&format!(",{}", spec.name));
    }
    out.push('\n');
    for (hi, &h) in s.hs.iter().enumerate() {
        out.push_str(&format!("{h:.16e}"));
        for mi in 0..s.methods.len() {
            out.push_str(&format!(",{:.16e}", rge[mi][hi]));
        }
        out.push('\n');
    }
    out.push_str("slope");
    let mut slopes = Vec::new();
    for mi in 0..s.methods.len() {
        let points: Vec<(f64, f64)> = s.hs.iter().copied().zip(rge[mi].iter().copied()).collect();
        match fitted_slope(&points) {
            Some(v) => {
                out.push_str(&format!(",{v:.6}"));
                slopes.push(format!("{}={v:.3}", s.methods[mi].name));
            }
            None => out.push(','),
        }
    }
    out.push('\n');
    fs::write(&path, out).map_err(|e| io_err(&path, e))?;
    println!(
        "converge problem={} cells={} slopes: {}",
        bench.name,
        cells.len(),
        if slopes.is_empty() { "n/a".into() } else { slopes.join(" ") }
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_volume(s: &StudySettings) -> Result<(), CliError> {
    let bench = lookup_problem(&s.problem)?;
    validate_cells(&bench, s)?;
    fs::create_dir_all(&s.out_dir).map_err(|e| io_err(&s.out_dir, e))?;

    struct Row {
        method: String,
        h: f64,
        steps: usize,
        nonconverged: usize,
        target: f64,
        max_dev: f64,
        max_residual: f64,
        asserted: bool,
        status: &'static str,
        rule: Option<String>,
    }

    let cells: Vec<(usize, usize)> = (0..s.methods.len())
        .flat_map(|m| (0..s.hs.len()).map(move |h| (m, h)))
        .collect();
    let mut results: Vec<Option<Result<Row, CliError>>> = (0..cells.len()).map(|_| None).collect();
    let bench_ref = &bench;
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (idx, &(mi, hi)) in cells.iter().enumerate() {
            let spec = &s.methods[mi];
            let h = s.hs[hi];
            let t_end = s.t_end;
            let out_dir = &s.out_dir;
            let assert_volume = s.assert_volume;
            handles.push((
                idx,
                scope.spawn(move || -> Result<Row, CliError> {
                    let (outcome, policy) = execute_cell(bench_ref, spec, h, t_end)?;
                    let path = cell_file(out_dir, "volume", bench_ref.name, &spec.name, h);
                    write_volume(&path, bench_ref, &spec.name, h, t_end, &outcome.report, &policy)?;
                    let max_dev = max_dev_from_target(&outcome.report, policy.target);
                    let asserted = assert_volume && policy.rule.is_some();
                    let status = if outcome.diverged.is_some() {
                        "diverged"
                    } else if !asserted {
                        "report"
                    } else if max_dev <= ASSERT_TOL {
                        "pass"
                    } else {
                        "fail"
                    };
                    Ok(Row {
                        method: spec.name.clone(),
                        h,
                        steps: outcome.traj.steps(),
                        nonconverged: outcome.traj.nonconverged_steps,
                        target: policy.target,
                        max_dev,
                        max_residual: max_vp_residual(&outcome.report),
                        asserted,
                        status,
                        rule: policy.rule,
                    })
                }),
            ));
        }
        for (idx, handle) in handles {
            results[idx] = Some(handle.join().unwrap_or_else(|_| {
                Err(CliError::Numerical("study worker panicked".into()))
            }));
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    for r in results.into_iter() {
        rows.push(r.unwrap()?);
    }

    let path = s.out_dir.join(format!("volume_{}_summary.csv", bench.name));
    let mut out = String::new();
    out.push_str(&format!(
        "# volume study problem={} t_end={:.16e}\n",
        bench.name, s.t_end
    ));
    for row in rows.iter().filter(|r| r.asserted) {
        out.push_str(&format!(
            "# rule[{} h={}]: {}\n",
            row.method,
            row.h,
            row.rule.as_deref().unwrap_or("")
        ));
    }
    out.push_str(
        "method,h,steps,nonconverged,target,max_abs_det_minus_target,max_vp_residual,asserted,status\n",
    );
    for row in &rows {
        out.push_str(&format!(
            "{},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{},{}\n",
            row.method,
            row.h,
            row.steps,
            row.nonconverged,
            row.target,
            row.max_dev,
            row.max_residual,
            if row.asserted { "yes" } else { "no" },
            row.status
        ));
    }
    fs::write(&path, out).map_err(|e| io_err(&path, e))?;

    for row in &rows {
        println!(
            "volume problem={} method={} h={} steps={} nonconverged={} max|det-target|={:.3e} status={}",
            bench.name, row.method, row.h, row.steps, row.nonconverged, row.max_dev, row.status
        );
    }
    println!("wrote {}", path.display());

    if let Some(row) = rows.iter().find(|r| r.status == "diverged") {
        return Err(CliError::Numerical(format!(
            "{} h={} diverged after {} steps (partial output written)",
            row.method, row.h, row.steps
        )));
    }
    if let Some(row) = rows.iter().find(|r| r.status == "fail") {
        return Err(CliError::Assertion(format!(
            "{} h={}: max |det − {:.6e}| = {:.3e} exceeds {ASSERT_TOL:e}",
            row.method, row.h, row.target, row.max_dev
        )));
    }
    Ok(())
}

pub struct ClassifySettings {
    pub problem: String,
    pub cert: Option<PathBuf>,
    pub seed: u64,
    pub samples: usize,
}

pub fn cmd_classify(s: &ClassifySettings) -> Result<(), CliError> {
    let bench = lookup_problem(&s.problem)?;
    let cert = match &s.cert {
        Some(path) => certfile::load(path, bench.first_order.dim)?,
        None => bench.first_order.class_cert.clone().ok_or_else(|| {
            CliError::Usage(format!(
                "problem {} carries no bundled certificate; provide --cert <file>",
                bench.name
            ))
        })?,
    };
    let stats = verify_class(&bench.first_order, &cert, s.samples, s.seed).map_err(|e| match e {
        CheckError::CertificateInvalid { message } => {
            CliError::Usage(format!("certificate invalid: {message}"))
        }
        other => CliError::Numerical(other.to_string()),
    })?;
    println!(
        "classify problem={} class={} samples={} seed={}",
        bench.name, cert.tag, stats.samples, s.seed
    );
    for (name, value) in &stats.relations {
        let verdict = if *value <= CERT_RESIDUAL_TOL { "pass" } else { "fail" };
        println!("  {name}: max residual {value:.3e} [{verdict}]");
    }
    if stats.passes() {
        println!("PASS (max residual {:.3e} <= {CERT_RESIDUAL_TOL:e})", stats.max);
        Ok(())
    } else {
        println!("FAIL (max residual {:.3e} > {CERT_RESIDUAL_TOL:e})", stats.max);
        Err(CliError::Assertion(format!(
            "class {} relations violated (max residual {:.3e})",
            cert.tag, stats.max
        )))
    }
}

pub fn cmd_list() -> Result<(), CliError> {
    println!("problems:");
    for name in benchmark_names() {
        let b = lookup_problem(name)?;
        let mut forms = vec!["first-order"];
        if b.second_order.is_some() {
            forms.push("second-order");
        }
        if b.partitioned.is_some() {
            forms.push("partitioned");
        }
        let cert = b
            .first_order
            .class_cert
            .as_ref()
            .map(|c| c.tag.to_string())
            .unwrap_or_else(|| "-".into());
        println!(
            "  {:<20} dim={} class={:<6} forms={:<40} default h={} t_end={}",
            b.name,
            b.first_order.dim,
            cert,
            forms.join(","),
            b.default_h,
            b.default_t_end
        );
        println!("      {}", b.description);
    }
    println!("methods:");
    for (name, kind, tableau) in builtin_methods() {
        println!("  {:<8} stepper={:<14} tableau={}", name, kind.label(), tableau);
    }
    println!("  custom   stepper=exponential   tableau=--tableau <file> (plain-text format)");
    Ok(())
}
