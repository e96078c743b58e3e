//! Method registry: named (tableau, stepper) pairs, custom-tableau loading,
//! stepper construction per problem form, and the volume-assertion policy.

use std::path::Path;

use vpflow::integrators::{
    AdaptedEiStepper, ErknStepper, OneStepMethod, RkStepper, RknStepper, SolverConfig, SseiStepper,
};
use vpflow::problems::Benchmark;
use vpflow::tableau::{equal_node_two_stage, gauss_legendre, ButcherTableau};
use vpflow::vpcheck::FieldClass;
use vpflow::{ClassCertificate, VectorFieldProblem};

use crate::CliError;

/// How a method advances the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepperKind {
    /// Exponential integrator on `y' = Ky + g(y)`; second-order problems run
    /// through the equivalent damped-oscillator formulation.
    Exponential,
    /// Plain implicit Runge–Kutta on the full field.
    PlainRk,
    /// Trigonometric integrator on the partitioned `(q, p)` form.
    TrigNystrom,
    /// Classical Nyström integrator (partitioned form with zero stiffness).
    Nystrom,
}

impl StepperKind {
    pub fn label(self) -> &'static str {
        match self {
            StepperKind::Exponential => "exponential",
            StepperKind::PlainRk => "plain-rk",
            StepperKind::TrigNystrom => "trigonometric",
            StepperKind::Nystrom => "nystrom",
        }
    }
}

#[derive(Clone)]
pub struct MethodSpec {
    pub name: String,
    pub kind: StepperKind,
    pub tableau: ButcherTableau,
}

/// (name, kind, tableau description) for every built-in method.
pub fn builtin_methods() -> Vec<(&'static str, StepperKind, &'static str)> {
    vec![
        ("SSEI1", StepperKind::Exponential, "midpoint (1-stage Gauss)"),
        ("SSEI2", StepperKind::Exponential, "2-stage Gauss"),
        ("SSRK1", StepperKind::PlainRk, "midpoint (1-stage Gauss)"),
        ("SSRK2", StepperKind::PlainRk, "2-stage Gauss"),
        ("ERKN1", StepperKind::TrigNystrom, "midpoint (1-stage Gauss)"),
        ("ERKN2EQ", StepperKind::TrigNystrom, "equal-node two-stage"),
        ("RKN1", StepperKind::Nystrom, "midpoint (1-stage Gauss)"),
        ("RKN2EQ", StepperKind::Nystrom, "equal-node two-stage"),
    ]
}

fn builtin_tableau(name: &str) -> Option<(StepperKind, ButcherTableau)> {
    let gauss1 = || gauss_legendre(1).expect("midpoint tableau");
    let gauss2 = || gauss_legendre(2).expect("2-stage Gauss tableau");
    match name {
        "SSEI1" => Some((StepperKind::Exponential, gauss1())),
        "SSEI2" => Some((StepperKind::Exponential, gauss2())),
        "SSRK1" => Some((StepperKind::PlainRk, gauss1())),
        "SSRK2" => Some((StepperKind::PlainRk, gauss2())),
        "ERKN1" => Some((StepperKind::TrigNystrom, gauss1())),
        "ERKN2EQ" => Some((StepperKind::TrigNystrom, equal_node_two_stage())),
        "RKN1" => Some((StepperKind::Nystrom, gauss1())),
        "RKN2EQ" => Some((StepperKind::Nystrom, equal_node_two_stage())),
        _ => None,
    }
}

/// Resolve a method name. An explicit `--tableau` file (or a method name
/// that is a readable file path) loads a custom tableau and runs it as an
/// exponential integrator.
pub fn resolve_method(name: &str, tableau_file: Option<&Path>) -> Result<MethodSpec, CliError> {
    if let Some(path) = tableau_file {
        let tableau = ButcherTableau::from_file(path)
            .map_err(|e| CliError::Usage(format!("tableau file {}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "CUSTOM".into());
        return Ok(MethodSpec {
            name: format!("CUSTOM-{stem}"),
            kind: StepperKind::Exponential,
            tableau,
        });
    }
    if let Some((kind, tableau)) = builtin_tableau(name) {
        return Ok(MethodSpec {
            name: name.to_string(),
            kind,
            tableau,
        });
    }
    let path = Path::new(name);
    if path.is_file() {
        return resolve_method("CUSTOM", Some(path));
    }
    let known: Vec<&str> = builtin_methods().iter().map(|(n, _, _)| *n).collect();
    Err(CliError::Usage(format!(
        "unknown method '{name}' (expected one of {} or a tableau file)",
        known.join(", ")
    )))
}

/// A constructed (problem, method, h) cell: the stepper plus everything the
/// volume checker needs to analyze its records.
pub struct BuiltCell {
    pub stepper: Box<dyn OneStepMethod + Send + Sync>,
    /// First-order problem whose coefficients reproduce the stepper's map.
    pub check_problem: VectorFieldProblem,
    pub tableau: ButcherTableau,
    pub cfg: SolverConfig,
    pub policy: VolumePolicy,
}

pub fn build_cell(bench: &Benchmark, spec: &MethodSpec, h: f64) -> Result<BuiltCell, CliError> {
    let cfg = SolverConfig::new(h);
    let numerical = |e: vpflow::StepError| CliError::Numerical(e.to_string());
    let (stepper, check_problem): (Box<dyn OneStepMethod + Send + Sync>, VectorFieldProblem) =
        match spec.kind {
            StepperKind::Exponential => {
                let stepper: Box<dyn OneStepMethod + Send + Sync> =
                    if let Some(second) = &bench.second_order {
                        Box::new(
                            AdaptedEiStepper::new(second.clone(), spec.tableau.clone(), cfg.clone())
                                .map_err(numerical)?,
                        )
                    } else {
                        Box::new(
                            SseiStepper::new(
                                bench.first_order.clone(),
                                spec.tableau.clone(),
                                cfg.clone(),
                            )
                            .map_err(numerical)?,
                        )
                    };
                (stepper, bench.first_order.clone())
            }
            StepperKind::PlainRk => {
                let stepper = RkStepper::new(bench.first_order.clone(), spec.tableau.clone(), cfg.clone());
                // A plain RK step is the exponential step with zero linear
                // part and the full field as nonlinearity; analyze it there.
                (Box::new(stepper), bench.first_order.rk_view())
            }
            StepperKind::TrigNystrom => {
                let part = bench.partitioned.as_ref().ok_or_else(|| {
                    CliError::Usage(format!(
                        "method {} needs a partitioned (q,p) form, which problem {} does not provide",
                        spec.name, bench.name
                    ))
                })?;
                let stepper = ErknStepper::new(part.clone(), spec.tableau.clone(), cfg.clone())
                    .map_err(numerical)?;
                (Box::new(stepper), part.embed())
            }
            StepperKind::Nystrom => {
                let part = bench.partitioned.as_ref().ok_or_else(|| {
                    CliError::Usage(format!(
                        "method {} needs a partitioned (q,p) form, which problem {} does not provide",
                        spec.name, bench.name
                    ))
                })?;
                if !part.is_omega_zero() {
                    return Err(CliError::Usage(format!(
                        "method {} requires zero stiffness; problem {} has Ω ≠ 0 (use ERKN instead)",
                        spec.name, bench.name
                    )));
                }
                let stepper = RknStepper::new(part.clone(), spec.tableau.clone(), cfg.clone())
                    .map_err(numerical)?;
                (Box::new(stepper), part.embed())
            }
        };
    let policy = volume_policy(bench, spec, &check_problem, h);
    Ok(BuiltCell {
        stepper,
        check_problem,
        tableau: spec.tableau.clone(),
        cfg,
        policy,
    })
}

/// Per-step determinant target and, when a preservation rule applies, the
/// rule text recorded in CSV headers for traceability.
#[derive(Debug, Clone)]
pub struct VolumePolicy {
    pub target: f64,
    pub rule: Option<String>,
}

pub const ASSERT_TOL: f64 = 1e-9;

/// Does any link of the certificate chain use the plain similarity
/// `PMP⁻¹ = −M` (which needs coincident nodes) rather than the transpose
/// similarity (which holds for any symplectic tableau)?
fn chain_needs_equal_nodes(cert: &ClassCertificate) -> bool {
    let trailing = matches!(cert.tag, FieldClass::S | FieldClass::F2);
    let inner = cert
        .inner
        .as_ref()
        .map(|c| chain_needs_equal_nodes(c))
        .unwrap_or(false);
    trailing || inner
}

fn volume_policy(
    bench: &Benchmark,
    spec: &MethodSpec,
    check_problem: &VectorFieldProblem,
    h: f64,
) -> VolumePolicy {
    let k = &check_problem.linear;
    let trace: f64 = (0..k.rows()).map(|i| k[(i, i)]).sum();
    let target = (h * trace).exp();
    if !spec.tableau.satisfies_vp_gate() {
        return VolumePolicy { target, rule: None };
    }
    let s = spec.tableau.stages();
    let nodes_ok = s == 1 || spec.tableau.has_equal_nodes();
    let rule = match spec.kind {
        StepperKind::Exponential => {
            if let Some(cert) = &bench.first_order.class_cert {
                if !chain_needs_equal_nodes(cert) {
                    Some(format!(
                        "{}-certified field: exponential methods preserve volume for any symplectic tableau with nonzero weights",
                        cert.tag
                    ))
                } else if nodes_ok {
                    Some(format!(
                        "{}-certified field: one-stage and equal-node exponential methods preserve volume",
                        cert.tag
                    ))
                } else {
                    None
                }
            } else if bench.second_order.is_some() && nodes_ok {
                Some(
                    "second-order form: stage nonlinearity is nilpotent, so the determinant equals det e^{hK}"
                        .into(),
                )
            } else {
                None
            }
        }
        StepperKind::TrigNystrom => nodes_ok.then(|| {
            "oscillatory separable form: one-stage and equal-node two-stage trigonometric methods preserve volume"
                .to_string()
        }),
        StepperKind::Nystrom => (s <= 2).then(|| {
            "separable second-order form: one- and two-stage symplectic Nyström methods preserve volume"
                .to_string()
        }),
        // Plain RK runs are always report-only: the theory covers the
        // exponential family, and coarse-step RK stages may not converge.
        StepperKind::PlainRk => None,
    };
    VolumePolicy { target, rule }
}
