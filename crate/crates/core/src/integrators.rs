//! One-step methods for `y' = Ky + g(y)` and its structured special cases,
//! plus the fixed-point stage solver and the trajectory driver.
//!
//! Five steppers are provided:
//!
//! * [`SseiStepper`] — exponential integrator whose coefficients
//!   `ā_ij = a_ij e^{(c_i−c_j)hK}`, `b̄_i = b_i e^{(1−c_i)hK}` are built from
//!   a Butcher tableau (see [`crate::tableau::build_exp_coefficients`]).
//! * [`RkStepper`] — the classical Runge–Kutta method of the same tableau,
//!   applied to the full field `f(y) = Ky + g(y)`; identical to the
//!   exponential integrator when `K = 0`.
//! * [`AdaptedEiStepper`] — the same exponential scheme written in the block
//!   form natural for `q'' − Nq' + Ωq = −∇V₁(q)`, operating on position
//!   stages only.
//! * [`ErknStepper`] — the trigonometric specialisation for
//!   `(q, p)' = (p, −Ωq + g̃(q))`, with stage coefficients
//!   `a_ij (c_i−c_j) ϕ₁((c_i−c_j)² h²Ω)` that vanish for one-stage and
//!   equal-node tableaux, making those runs explicit.
//! * [`RknStepper`] — the `Ω = 0` reduction (Runge–Kutta–Nyström) for
//!   `q'' = g̃(q)`.
//!
//! All steppers produce a [`StepRecord`] holding the accepted state, the
//! converged stage values, and the fixed-point iteration diagnostics that the
//! volume verifier needs.

use std::fmt;
use std::sync::Arc;

use crate::matfun::{phi_trig, second_order_exp_blocks, MatError, Matrix};
use crate::tableau::{build_exp_coefficients, ButcherTableau, ExpCoefficients};
use crate::vpcheck::ClassCertificate;

/// Nonlinear part `g` (or `∇V₁`, `g̃`) as a shared closure.
pub type StateFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Analytic Jacobian of a [`StateFn`].
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> Matrix + Send + Sync>;
/// Exact solution as a map from time to state.
pub type ExactFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Iterates whose max-norm exceeds `1e12 · (1 + ‖x₀‖_∞)` are reported as
/// divergent; unbounded fixed-point iterations grow past this long before
/// they overflow to infinity.
pub const DIVERGENCE_GROWTH_FACTOR: f64 = 1e12;

/// An increment that has stopped shrinking while sitting below
/// `100 ε · max(1, ‖x‖_∞)` is rounding noise, not lack of convergence.
pub const STAGNATION_ULP_FACTOR: f64 = 100.0;

/// Relative slack allowed between `t_end` and the nearest step multiple.
pub const GRID_ALIGNMENT_TOL: f64 = 1e-9;

/// Errors produced by the steppers and the trajectory driver.
#[derive(Debug, Clone, PartialEq)]
pub enum StepError {
    /// A fixed-point iterate became non-finite or grew past the divergence
    /// guard; `stage` is the first offending stage (0-based).
    Divergence { stage: usize, iteration: usize },
    /// A matrix-function evaluation failed while preparing coefficients.
    Mat(MatError),
    /// State length does not match the problem dimension.
    DimensionMismatch { expected: usize, got: usize },
    /// `t_end` is not an integer multiple of the step size.
    GridMisaligned { h: f64, t_end: f64 },
    /// The Runge–Kutta–Nyström stepper requires a zero stiffness matrix.
    NonzeroStiffness,
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepError::Divergence { stage, iteration } => write!(
                f,
                "fixed-point iteration diverged at stage {stage}, iteration {iteration}"
            ),
            StepError::Mat(e) => write!(f, "matrix function failure: {e}"),
            StepError::DimensionMismatch { expected, got } => {
                write!(f, "state has length {got}, problem expects {expected}")
            }
            StepError::GridMisaligned { h, t_end } => write!(
                f,
                "t_end = {t_end} is not an integer multiple of h = {h}"
            ),
            StepError::NonzeroStiffness => {
                write!(f, "this stepper requires a zero stiffness matrix")
            }
        }
    }
}

impl std::error::Error for StepError {}

impl From<MatError> for StepError {
    fn from(e: MatError) -> Self {
        StepError::Mat(e)
    }
}

/// A first-order problem `y' = Ky + g(y)` with analytic nonlinearity
/// Jacobian, an optional vector-field class certificate, and an optional
/// exact solution.
#[derive(Clone)]
pub struct VectorFieldProblem {
    pub name: String,
    pub dim: usize,
    /// Linear part `K`.
    pub linear: Matrix,
    /// Nonlinear part `g`.
    pub nonlinear: StateFn,
    /// Analytic `g'`.
    pub nonlinear_jac: JacobianFn,
    pub class_cert: Option<ClassCertificate>,
    pub exact: Option<ExactFn>,
}

impl fmt::Debug for VectorFieldProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("has_cert", &self.class_cert.is_some())
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl VectorFieldProblem {
    pub fn new(
        name: &str,
        linear: Matrix,
        nonlinear: StateFn,
        nonlinear_jac: JacobianFn,
    ) -> Self {
        assert!(linear.is_square(), "linear part must be square");
        let dim = linear.rows();
        VectorFieldProblem {
            name: name.to_string(),
            dim,
            linear,
            nonlinear,
            nonlinear_jac,
            class_cert: None,
            exact: None,
        }
    }

    pub fn with_class_cert(mut self, cert: ClassCertificate) -> Self {
        self.class_cert = Some(cert);
        self
    }

    pub fn with_exact(mut self, exact: ExactFn) -> Self {
        self.exact = Some(exact);
        self
    }

    /// Full field `f(y) = Ky + g(y)`.
    pub fn field(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.linear.mul_vec(y);
        let g = (self.nonlinear)(y);
        for (o, gi) in out.iter_mut().zip(g.iter()) {
            *o += gi;
        }
        out
    }

    /// Full field Jacobian `f'(y) = K + g'(y)`.
    pub fn field_jacobian(&self, y: &[f64]) -> Matrix {
        &self.linear + &(self.nonlinear_jac)(y)
    }

    /// The same field written with a zero linear part: `K = 0`,
    /// `g(y) = f(y)`. A classical Runge–Kutta step on this problem is the
    /// exponential-integrator step on the view, so the volume checker can
    /// analyse Runge–Kutta trajectories with the exponential formulas.
    pub fn rk_view(&self) -> VectorFieldProblem {
        let k = self.linear.clone();
        let g = self.nonlinear.clone();
        let k_jac = self.linear.clone();
        let g_jac = self.nonlinear_jac.clone();
        let dim = self.dim;
        let full: StateFn = Arc::new(move |y: &[f64]| {
            let mut out = k.mul_vec(y);
            for (o, gi) in out.iter_mut().zip(g(y)) {
                *o += gi;
            }
            out
        });
        let full_jac: JacobianFn = Arc::new(move |y: &[f64]| &k_jac + &g_jac(y));
        VectorFieldProblem {
            name: format!("{}-rk-view", self.name),
            dim,
            linear: Matrix::zeros(dim, dim),
            nonlinear: full,
            nonlinear_jac: full_jac,
            class_cert: self.class_cert.clone(),
            exact: self.exact.clone(),
        }
    }
}

/// A second-order problem `q'' − Nq' + Ωq = −∇V₁(q)`; its first-order
/// embedding has `K = [[0, I], [−Ω, N]]` and `g(y) = (0, −∇V₁(q))`.
#[derive(Clone)]
pub struct SecondOrderProblem {
    pub name: String,
    /// Dimension of `q`.
    pub dim: usize,
    pub n_mat: Matrix,
    pub omega: Matrix,
    pub grad_v1: StateFn,
    pub grad_v1_jac: JacobianFn,
}

impl fmt::Debug for SecondOrderProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecondOrderProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl SecondOrderProblem {
    pub fn new(
        name: &str,
        n_mat: Matrix,
        omega: Matrix,
        grad_v1: StateFn,
        grad_v1_jac: JacobianFn,
    ) -> Self {
        assert!(n_mat.is_square() && omega.is_square());
        assert_eq!(n_mat.rows(), omega.rows());
        let dim = n_mat.rows();
        SecondOrderProblem {
            name: name.to_string(),
            dim,
            n_mat,
            omega,
            grad_v1,
            grad_v1_jac,
        }
    }

    /// First-order embedding on `y = (q, q')`.
    pub fn embed(&self) -> VectorFieldProblem {
        let n = self.dim;
        let mut k = Matrix::zeros(2 * n, 2 * n);
        k.set_block(0, n, &Matrix::identity(n));
        k.set_block(n, 0, &self.omega.scale(-1.0));
        k.set_block(n, n, &self.n_mat);
        let grad = self.grad_v1.clone();
        let grad_jac = self.grad_v1_jac.clone();
        let g: StateFn = Arc::new(move |y: &[f64]| {
            let mut out = vec![0.0; 2 * n];
            let gv = grad(&y[..n]);
            for i in 0..n {
                out[n + i] = -gv[i];
            }
            out
        });
        let g_jac: JacobianFn = Arc::new(move |y: &[f64]| {
            let mut jac = Matrix::zeros(2 * n, 2 * n);
            jac.set_block(n, 0, &grad_jac(&y[..n]).scale(-1.0));
            jac
        });
        VectorFieldProblem::new(&format!("{}-embedded", self.name), k, g, g_jac)
    }
}

/// A partitioned problem `(q, p)' = (p, −Ωq + g̃(q))`; its first-order
/// embedding has `K = [[0, I], [−Ω, 0]]` and `g(y) = (0, g̃(q))`.
#[derive(Clone)]
pub struct PartitionedProblem {
    pub name: String,
    /// Dimension of `q`.
    pub dim: usize,
    pub omega: Matrix,
    pub gtilde: StateFn,
    pub gtilde_jac: JacobianFn,
}

impl fmt::Debug for PartitionedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartitionedProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl PartitionedProblem {
    pub fn new(name: &str, omega: Matrix, gtilde: StateFn, gtilde_jac: JacobianFn) -> Self {
        assert!(omega.is_square());
        let dim = omega.rows();
        PartitionedProblem {
            name: name.to_string(),
            dim,
            omega,
            gtilde,
            gtilde_jac,
        }
    }

    pub fn is_omega_zero(&self) -> bool {
        self.omega.max_abs() == 0.0
    }

    /// First-order embedding on `y = (q, p)`. The embedded field always
    /// satisfies `P f'(y) P⁻¹ = −f'(y)` with `P = diag(I, −I)`, so the
    /// certificate is attached unconditionally.
    pub fn embed(&self) -> VectorFieldProblem {
        let n = self.dim;
        let mut k = Matrix::zeros(2 * n, 2 * n);
        k.set_block(0, n, &Matrix::identity(n));
        k.set_block(n, 0, &self.omega.scale(-1.0));
        let gt = self.gtilde.clone();
        let gt_jac = self.gtilde_jac.clone();
        let g: StateFn = Arc::new(move |y: &[f64]| {
            let mut out = vec![0.0; 2 * n];
            let gv = gt(&y[..n]);
            for i in 0..n {
                out[n + i] = gv[i];
            }
            out
        });
        let g_jac: JacobianFn = Arc::new(move |y: &[f64]| {
            let mut jac = Matrix::zeros(2 * n, 2 * n);
            jac.set_block(n, 0, &gt_jac(&y[..n]));
            jac
        });
        let p = Matrix::from_fn(2 * n, 2 * n, |i, j| {
            if i != j {
                0.0
            } else if i < n {
                1.0
            } else {
                -1.0
            }
        });
        VectorFieldProblem::new(&format!("{}-embedded", self.name), k, g, g_jac)
            .with_class_cert(ClassCertificate::s_class(p))
    }
}

/// Fixed-point solver configuration and step size.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step size.
    pub h: f64,
    /// Absolute max-norm tolerance on stage increments.
    pub fp_tol: f64,
    /// Maximum number of fixed-point sweeps per step.
    pub fp_max_iter: usize,
}

impl SolverConfig {
    /// Default tolerances: `fp_tol = 1e−16`, `fp_max_iter = 100`.
    pub fn new(h: f64) -> Self {
        assert!(h > 0.0, "step size must be positive");
        SolverConfig {
            h,
            fp_tol: 1e-16,
            fp_max_iter: 100,
        }
    }

    pub fn with_tol(mut self, fp_tol: f64) -> Self {
        assert!(fp_tol > 0.0);
        self.fp_tol = fp_tol;
        self
    }

    pub fn with_max_iter(mut self, fp_max_iter: usize) -> Self {
        assert!(fp_max_iter >= 1);
        self.fp_max_iter = fp_max_iter;
        self
    }
}

/// Outcome of one accepted step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub y_next: Vec<f64>,
    /// Converged stage values. Steppers that iterate on position stages only
    /// still record the full embedded stage states here.
    pub stages: Vec<Vec<f64>>,
    pub iterations: usize,
    /// True when the final increment met `fp_tol` or stagnated at rounding
    /// level (see `stagnated`).
    pub converged: bool,
    /// True when convergence was declared because the increment stopped
    /// shrinking below `100 ε · max(1, ‖x‖_∞)` rather than meeting `fp_tol`.
    pub stagnated: bool,
    pub increment_norm: f64,
}

/// Raw fixed-point solver outcome.
#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub stages: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub stagnated: bool,
    pub increment_norm: f64,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Iterate `x ← stage_map(x)` until the max-norm increment across all stages
/// meets `cfg.fp_tol`, stagnates at rounding level, or `cfg.fp_max_iter`
/// sweeps have run. Non-convergence within the budget is recorded, not
/// fatal; non-finite or unboundedly growing iterates are.
pub fn fixed_point_solve(
    stage_map: impl Fn(&[Vec<f64>]) -> Vec<Vec<f64>>,
    initial: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Result<FixedPointResult, StepError> {
    let initial_norm = initial.iter().map(|s| max_norm(s)).fold(0.0_f64, f64::max);
    let growth_bound = DIVERGENCE_GROWTH_FACTOR * (1.0 + initial_norm);
    let mut x: Vec<Vec<f64>> = initial.to_vec();
    let mut prev_increment = f64::INFINITY;
    let mut increment = f64::INFINITY;
    for iteration in 1..=cfg.fp_max_iter {
        let next = stage_map(&x);
        debug_assert_eq!(next.len(), x.len());
        increment = 0.0;
        let mut norm = 0.0_f64;
        for (stage, (xs, ns)) in x.iter().zip(next.iter()).enumerate() {
            if !ns.iter().all(|v| v.is_finite()) {
                return Err(StepError::Divergence { stage, iteration });
            }
            let stage_norm = max_norm(ns);
            if stage_norm > growth_bound {
                return Err(StepError::Divergence { stage, iteration });
            }
            norm = norm.max(stage_norm);
            for (a, b) in xs.iter().zip(ns.iter()) {
                increment = increment.max((a - b).abs());
            }
        }
        x = next;
        if increment <= cfg.fp_tol {
            return Ok(FixedPointResult {
                stages: x,
                iterations: iteration,
                converged: true,
                stagnated: false,
                increment_norm: increment,
            });
        }
        let stagnation_level = STAGNATION_ULP_FACTOR * f64::EPSILON * norm.max(1.0);
        if increment <= stagnation_level && increment >= prev_increment {
            return Ok(FixedPointResult {
                stages: x,
                iterations: iteration,
                converged: true,
                stagnated: true,
                increment_norm: increment,
            });
        }
        prev_increment = increment;
    }
    Ok(FixedPointResult {
        stages: x,
        iterations: cfg.fp_max_iter,
        converged: false,
        stagnated: false,
        increment_norm: increment,
    })
}

/// A prepared one-step method: coefficients are built once per
/// (problem, tableau, step size) and reused across steps.
pub trait OneStepMethod {
    /// Dimension of the state the stepper advances.
    fn dim(&self) -> usize;
    /// Step size the coefficients were built for.
    fn step_size(&self) -> f64;
    /// Advance one step from `y`.
    fn step(&self, y: &[f64]) -> Result<StepRecord, StepError>;
}

fn check_dim(expected: usize, y: &[f64]) -> Result<(), StepError> {
    if y.len() != expected {
        return Err(StepError::DimensionMismatch {
            expected,
            got: y.len(),
        });
    }
    Ok(())
}

/// Exponential integrator with coefficients `ā_ij = a_ij e^{(c_i−c_j)hK}`,
/// `b̄_i = b_i e^{(1−c_i)hK}`:
///
/// ```text
/// k_i     = e^{c_i hK} y + h Σ_j ā_ij g(k_j)
/// y_next  = e^{hK}     y + h Σ_i b̄_i  g(k_i)
/// ```
pub struct SseiStepper {
    pub problem: VectorFieldProblem,
    pub tableau: ButcherTableau,
    pub cfg: SolverConfig,
    coeffs: ExpCoefficients,
}

impl SseiStepper {
    pub fn new(
        problem: VectorFieldProblem,
        tableau: ButcherTableau,
        cfg: SolverConfig,
    ) -> Result<Self, StepError> {
        let coeffs = build_exp_coefficients(&tableau, cfg.h, &problem.linear)?;
        Ok(SseiStepper {
            problem,
            tableau,
            cfg,
            coeffs,
        })
    }

    pub fn coefficients(&self) -> &ExpCoefficients {
        &self.coeffs
    }
}

impl OneStepMethod for SseiStepper {
    fn dim(&self) -> usize {
        self.problem.dim
    }

    fn step_size(&self) -> f64 {
        self.cfg.h
    }

    fn step(&self, y: &[f64]) -> Result<StepRecord, StepError> {
        check_dim(self.problem.dim, y)?;
        let s = self.tableau.stages();
        let h = self.cfg.h;
        let seeds: Vec<Vec<f64>> = (0..s)
            .map(|i| self.coeffs.node_exponentials[i].mul_vec(y))
            .collect();
        let g = &self.problem.nonlinear;
        let map = |stages: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let g_vals: Vec<Vec<f64>> = stages.iter().map(|k| g(k)).collect();
            (0..s)
                .map(|i| {
                    let mut out = seeds[i].clone();
                    for j in 0..s {
                        let contrib = self.coeffs.abar[i][j].mul_vec(&g_vals[j]);
                        for (o, v) in out.iter_mut().zip(contrib.iter()) {
                            *o += h * v;
                        }
                    }
                    out
                })
                .collect()
        };
        let fp = fixed_point_solve(map, &seeds, &self.cfg)?;
        let mut y_next = self.coeffs.step_exponential.mul_vec(y);
        for i in 0..s {
            let contrib = self.coeffs.bbar[i].mul_vec(&g(&fp.stages[i]));
            for (o, v) in y_next.iter_mut().zip(contrib.iter()) {
                *o += h * v;
            }
        }
        Ok(StepRecord {
            y_next,
            stages: fp.stages,
            iterations: fp.iterations,
            converged: fp.converged,
            stagnated: fp.stagnated,
            increment_norm: fp.increment_norm,
        })
    }
}

/// Classical (generally implicit) Runge–Kutta method on the full field
/// `f(y) = Ky + g(y)`:
///
/// ```text
/// k_i     = y + h Σ_j a_ij f(k_j)
/// y_next  = y + h Σ_i b_i  f(k_i)
/// ```
pub struct RkStepper {
    pub problem: VectorFieldProblem,
    pub tableau: ButcherTableau,
    pub cfg: SolverConfig,
}

impl RkStepper {
    pub fn new(problem: VectorFieldProblem, tableau: ButcherTableau, cfg: SolverConfig) -> Self {
        RkStepper {
            problem,
            tableau,
            cfg,
        }
    }
}

impl OneStepMethod for RkStepper {
    fn dim(&self) -> usize {
        self.problem.dim
    }

    fn step_size(&self) -> f64 {
        self.cfg.h
    }

    fn step(&self, y: &[f64]) -> Result<StepRecord, StepError> {
        check_dim(self.problem.dim, y)?;
        let s = self.tableau.stages();
        let h = self.cfg.h;
        let a = self.tableau.a();
        let seeds: Vec<Vec<f64>> = (0..s).map(|_| y.to_vec()).collect();
        let map = |stages: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let f_vals: Vec<Vec<f64>> = stages.iter().map(|k| self.problem.field(k)).collect();
            (0..s)
                .map(|i| {
                    let mut out = y.to_vec();
                    for j in 0..s {
                        for (o, v) in out.iter_mut().zip(f_vals[j].iter()) {
                            *o += h * a[(i, j)] * v;
                        }
                    }
                    out
                })
                .collect()
        };
        let fp = fixed_point_solve(map, &seeds, &self.cfg)?;
        let mut y_next = y.to_vec();
        for i in 0..s {
            let fi = self.problem.field(&fp.stages[i]);
            for (o, v) in y_next.iter_mut().zip(fi.iter()) {
                *o += h * self.tableau.b()[i] * v;
            }
        }
        Ok(StepRecord {
            y_next,
            stages: fp.stages,
            iterations: fp.iterations,
            converged: fp.converged,
            stagnated: fp.stagnated,
            increment_norm: fp.increment_norm,
        })
    }
}

/// The exponential integrator of [`SseiStepper`] written directly on
/// `(q, q')` for `q'' − Nq' + Ωq = −∇V₁(q)`. With `E(x)` the blocks of
/// `e^{x[[0,I],[−Ω,N]]}`:
///
/// ```text
/// k_i  = E¹¹(c_i h) q + E¹²(c_i h) q' − h Σ_j a_ij E¹²((c_i−c_j)h) ∇V₁(k_j)
/// q₁   = E¹¹(h) q + E¹²(h) q' − h Σ_i b_i E¹²((1−c_i)h) ∇V₁(k_i)
/// q'₁  = E²¹(h) q + E²²(h) q' − h Σ_i b_i E²²((1−c_i)h) ∇V₁(k_i)
/// ```
///
/// The fixed point runs on position stages only; the diagonal coefficient
/// `E¹²(0) = 0` makes one-stage tableaux explicit. Velocity stages are
/// reconstructed afterwards so records carry full embedded stage states.
pub struct AdaptedEiStepper {
    pub problem: SecondOrderProblem,
    pub tableau: ButcherTableau,
    pub cfg: SolverConfig,
    node11: Vec<Matrix>,
    node12: Vec<Matrix>,
    pair12: Vec<Vec<Matrix>>,
    pair22: Vec<Vec<Matrix>>,
    tail12: Vec<Matrix>,
    tail22: Vec<Matrix>,
    step_blocks: (Matrix, Matrix, Matrix, Matrix),
}

impl AdaptedEiStepper {
    pub fn new(
        problem: SecondOrderProblem,
        tableau: ButcherTableau,
        cfg: SolverConfig,
    ) -> Result<Self, StepError> {
        let h = cfg.h;
        let c = tableau.c();
        let s = tableau.stages();
        let blocks = |t: f64| second_order_exp_blocks(t, &problem.n_mat, &problem.omega);
        let mut node11 = Vec::with_capacity(s);
        let mut node12 = Vec::with_capacity(s);
        let mut pair12 = Vec::with_capacity(s);
        let mut pair22 = Vec::with_capacity(s);
        let mut tail12 = Vec::with_capacity(s);
        let mut tail22 = Vec::with_capacity(s);
        for i in 0..s {
            let (e11, e12, _, _) = blocks(c[i] * h)?;
            node11.push(e11);
            node12.push(e12);
            let mut row12 = Vec::with_capacity(s);
            let mut row22 = Vec::with_capacity(s);
            for j in 0..s {
                let (_, e12, _, e22) = blocks((c[i] - c[j]) * h)?;
                row12.push(e12);
                row22.push(e22);
            }
            pair12.push(row12);
            pair22.push(row22);
            let (_, e12, _, e22) = blocks((1.0 - c[i]) * h)?;
            tail12.push(e12);
            tail22.push(e22);
        }
        let step_blocks = blocks(h)?;
        Ok(AdaptedEiStepper {
            problem,
            tableau,
            cfg,
            node11,
            node12,
            pair12,
            pair22,
            tail12,
            tail22,
            step_blocks,
        })
    }
}

impl OneStepMethod for AdaptedEiStepper {
    fn dim(&self) -> usize {
        2 * self.problem.dim
    }

    fn step_size(&self) -> f64 {
        self.cfg.h
    }

    fn step(&self, y: &[f64]) -> Result<StepRecord, StepError> {
        let n = self.problem.dim;
        check_dim(2 * n, y)?;
        let (q, qp) = y.split_at(n);
        let s = self.tableau.stages();
        let h = self.cfg.h;
        let a = self.tableau.a();
        let b = self.tableau.b();
        let grad = &self.problem.grad_v1;
        let seeds: Vec<Vec<f64>> = (0..s)
            .map(|i| {
                let mut out = self.node11[i].mul_vec(q);
                for (o, v) in out.iter_mut().zip(self.node12[i].mul_vec(qp)) {
                    *o += v;
                }
                out
            })
            .collect();
        let map = |stages: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let g_vals: Vec<Vec<f64>> = stages.iter().map(|k| grad(k)).collect();
            (0..s)
                .map(|i| {
                    let mut out = seeds[i].clone();
                    for j in 0..s {
                        if a[(i, j)] == 0.0 {
                            continue;
                        }
                        let contrib = self.pair12[i][j].mul_vec(&g_vals[j]);
                        for (o, v) in out.iter_mut().zip(contrib.iter()) {
                            *o -= h * a[(i, j)] * v;
                        }
                    }
                    out
                })
                .collect()
        };
        let fp = fixed_point_solve(map, &seeds, &self.cfg)?;
        let g_vals: Vec<Vec<f64>> = fp.stages.iter().map(|k| grad(k)).collect();
        let (e11, e12, e21, e22) = &self.step_blocks;
        let mut q_next = e11.mul_vec(q);
        for (o, v) in q_next.iter_mut().zip(e12.mul_vec(qp)) {
            *o += v;
        }
        let mut qp_next = e21.mul_vec(q);
        for (o, v) in qp_next.iter_mut().zip(e22.mul_vec(qp)) {
            *o += v;
        }
        for i in 0..s {
            let c12 = self.tail12[i].mul_vec(&g_vals[i]);
            let c22 = self.tail22[i].mul_vec(&g_vals[i]);
            for j in 0..n {
                q_next[j] -= h * b[i] * c12[j];
                qp_next[j] -= h * b[i] * c22[j];
            }
        }
        // Velocity stages of the equivalent first-order scheme, so that the
        // record exposes full embedded stage states.
        let node21: Vec<Matrix> = (0..s)
            .map(|i| {
                second_order_exp_blocks(self.tableau.c()[i] * h, &self.problem.n_mat, &self.problem.omega)
                    .map(|(_, _, e21, _)| e21)
            })
            .collect::<Result<_, _>>()?;
        let node22: Vec<Matrix> = (0..s)
            .map(|i| {
                second_order_exp_blocks(self.tableau.c()[i] * h, &self.problem.n_mat, &self.problem.omega)
                    .map(|(_, _, _, e22)| e22)
            })
            .collect::<Result<_, _>>()?;
        let mut stages = Vec::with_capacity(s);
        for i in 0..s {
            let mut vel = node21[i].mul_vec(q);
            for (o, v) in vel.iter_mut().zip(node22[i].mul_vec(qp)) {
                *o += v;
            }
            for j in 0..s {
                if a[(i, j)] == 0.0 {
                    continue;
                }
                let contrib = self.pair22[i][j].mul_vec(&g_vals[j]);
                for (o, v) in vel.iter_mut().zip(contrib.iter()) {
                    *o -= h * a[(i, j)] * v;
                }
            }
            let mut full = fp.stages[i].clone();
            full.extend_from_slice(&vel);
            stages.push(full);
        }
        let mut y_next = q_next;
        y_next.extend_from_slice(&qp_next);
        Ok(StepRecord {
            y_next,
            stages,
            iterations: fp.iterations,
            converged: fp.converged,
            stagnated: fp.stagnated,
            increment_norm: fp.increment_norm,
        })
    }
}

/// Trigonometric integrator for `(q, p)' = (p, −Ωq + g̃(q))`. With
/// `V = h²Ω`:
///
/// ```text
/// Q_i  = ϕ₀(c_i²V) q + h c_i ϕ₁(c_i²V) p + h² Σ_j a_ij(c_i−c_j) ϕ₁((c_i−c_j)²V) g̃(Q_j)
/// q₁   = ϕ₀(V) q + h ϕ₁(V) p + h² Σ_i b_i(1−c_i) ϕ₁((1−c_i)²V) g̃(Q_i)
/// p₁   = −hΩ ϕ₁(V) q + ϕ₀(V) p + h Σ_i b_i ϕ₀((1−c_i)²V) g̃(Q_i)
/// ```
///
/// The stage coefficient carries the scalar factor `a_ij (c_i − c_j)`, which
/// vanishes exactly at `i = j` and whenever `c_i = c_j`; one-stage and
/// equal-node two-stage tableaux therefore run explicitly (one sweep).
pub struct ErknStepper {
    pub problem: PartitionedProblem,
    pub tableau: ButcherTableau,
    pub cfg: SolverConfig,
    node0: Vec<Matrix>,
    node1: Vec<Matrix>,
    /// `a_ij (c_i−c_j) ϕ₁((c_i−c_j)²V)`, or `None` when the scalar factor is 0.
    stage1: Vec<Vec<Option<Matrix>>>,
    /// `ϕ₀((c_i−c_j)²V)` for velocity-stage reconstruction.
    stage0: Vec<Vec<Matrix>>,
    tail1: Vec<Matrix>,
    tail0: Vec<Matrix>,
    phi0_v: Matrix,
    phi1_v: Matrix,
}

impl ErknStepper {
    pub fn new(
        problem: PartitionedProblem,
        tableau: ButcherTableau,
        cfg: SolverConfig,
    ) -> Result<Self, StepError> {
        let h = cfg.h;
        let v = problem.omega.scale(h * h);
        let c = tableau.c();
        let a = tableau.a();
        let s = tableau.stages();
        let mut node0 = Vec::with_capacity(s);
        let mut node1 = Vec::with_capacity(s);
        let mut stage1 = Vec::with_capacity(s);
        let mut stage0 = Vec::with_capacity(s);
        let mut tail1 = Vec::with_capacity(s);
        let mut tail0 = Vec::with_capacity(s);
        for i in 0..s {
            node0.push(phi_trig(0, &v.scale(c[i] * c[i]))?);
            node1.push(phi_trig(1, &v.scale(c[i] * c[i]))?);
            let mut row1 = Vec::with_capacity(s);
            let mut row0 = Vec::with_capacity(s);
            for j in 0..s {
                let d = c[i] - c[j];
                let vd = v.scale(d * d);
                row0.push(phi_trig(0, &vd)?);
                let w = a[(i, j)] * d;
                if w == 0.0 {
                    row1.push(None);
                } else {
                    row1.push(Some(phi_trig(1, &vd)?.scale(w)));
                }
            }
            stage1.push(row1);
            stage0.push(row0);
            let d = 1.0 - c[i];
            tail1.push(phi_trig(1, &v.scale(d * d))?);
            tail0.push(phi_trig(0, &v.scale(d * d))?);
        }
        let phi0_v = phi_trig(0, &v)?;
        let phi1_v = phi_trig(1, &v)?;
        Ok(ErknStepper {
            problem,
            tableau,
            cfg,
            node0,
            node1,
            stage1,
            stage0,
            tail1,
            tail0,
            phi0_v,
            phi1_v,
        })
    }
}

impl OneStepMethod for ErknStepper {
    fn dim(&self) -> usize {
        2 * self.problem.dim
    }

    fn step_size(&self) -> f64 {
        self.cfg.h
    }

    fn step(&self, y: &[f64]) -> Result<StepRecord, StepError> {
        let n = self.problem.dim;
        check_dim(2 * n, y)?;
        let (q, p) = y.split_at(n);
        let s = self.tableau.stages();
        let h = self.cfg.h;
        let c = self.tableau.c();
        let a = self.tableau.a();
        let b = self.tableau.b();
        let gt = &self.problem.gtilde;
        let seeds: Vec<Vec<f64>> = (0..s)
            .map(|i| {
                let mut out = self.node0[i].mul_vec(q);
                for (o, v) in out.iter_mut().zip(self.node1[i].mul_vec(p)) {
                    *o += h * c[i] * v;
                }
                out
            })
            .collect();
        let map = |stages: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let g_vals: Vec<Vec<f64>> = stages.iter().map(|k| gt(k)).collect();
            (0..s)
                .map(|i| {
                    let mut out = seeds[i].clone();
                    for j in 0..s {
                        if let Some(w) = &self.stage1[i][j] {
                            let contrib = w.mul_vec(&g_vals[j]);
                            for (o, v) in out.iter_mut().zip(contrib.iter()) {
                                *o += h * h * v;
                            }
                        }
                    }
                    out
                })
                .collect()
        };
        let fp = fixed_point_solve(map, &seeds, &self.cfg)?;
        let g_vals: Vec<Vec<f64>> = fp.stages.iter().map(|k| gt(k)).collect();
        let mut q_next = self.phi0_v.mul_vec(q);
        for (o, v) in q_next.iter_mut().zip(self.phi1_v.mul_vec(p)) {
            *o += h * v;
        }
        let omega_phi1_q = self.problem.omega.mul_vec(&self.phi1_v.mul_vec(q));
        let mut p_next = self.phi0_v.mul_vec(p);
        for (o, v) in p_next.iter_mut().zip(omega_phi1_q.iter()) {
            *o -= h * v;
        }
        for i in 0..s {
            let cq = self.tail1[i].mul_vec(&g_vals[i]);
            let cp = self.tail0[i].mul_vec(&g_vals[i]);
            for j in 0..n {
                q_next[j] += h * h * b[i] * (1.0 - c[i]) * cq[j];
                p_next[j] += h * b[i] * cp[j];
            }
        }
        // Velocity stages of the equivalent first-order scheme.
        let mut stages = Vec::with_capacity(s);
        for i in 0..s {
            let mut vel = self.node0[i].mul_vec(p);
            let om_q = self.problem.omega.mul_vec(&self.node1[i].mul_vec(q));
            for (o, v) in vel.iter_mut().zip(om_q.iter()) {
                *o -= h * c[i] * v;
            }
            for j in 0..s {
                if a[(i, j)] == 0.0 {
                    continue;
                }
                let contrib = self.stage0[i][j].mul_vec(&g_vals[j]);
                for (o, v) in vel.iter_mut().zip(contrib.iter()) {
                    *o += h * a[(i, j)] * v;
                }
            }
            let mut full = fp.stages[i].clone();
            full.extend_from_slice(&vel);
            stages.push(full);
        }
        let mut y_next = q_next;
        y_next.extend_from_slice(&p_next);
        Ok(StepRecord {
            y_next,
            stages,
            iterations: fp.iterations,
            converged: fp.converged,
            stagnated: fp.stagnated,
            increment_norm: fp.increment_norm,
        })
    }
}

/// Runge–Kutta–Nyström method for `q'' = g̃(q)` (the `Ω = 0` reduction of
/// [`ErknStepper`], where `ϕ₀ = ϕ₁ = I`):
///
/// ```text
/// Q_i  = q + h c_i q' + h² Σ_j a_ij(c_i−c_j) g̃(Q_j)
/// q₁   = q + h q' + h² Σ_i b_i(1−c_i) g̃(Q_i)
/// q'₁  = q' + h Σ_i b_i g̃(Q_i)
/// ```
pub struct RknStepper {
    pub problem: PartitionedProblem,
    pub tableau: ButcherTableau,
    pub cfg: SolverConfig,
}

impl RknStepper {
    /// Requires `Omega = 0`.
    pub fn new(
        problem: PartitionedProblem,
        tableau: ButcherTableau,
        cfg: SolverConfig,
    ) -> Result<Self, StepError> {
        if !problem.is_omega_zero() {
            return Err(StepError::NonzeroStiffness);
        }
        Ok(RknStepper {
            problem,
            tableau,
            cfg,
        })
    }
}

impl OneStepMethod for RknStepper {
    fn dim(&self) -> usize {
        2 * self.problem.dim
    }

    fn step_size(&self) -> f64 {
        self.cfg.h
    }

    fn step(&self, y: &[f64]) -> Result<StepRecord, StepError> {
        let n = self.problem.dim;
        check_dim(2 * n, y)?;
        let (q, qp) = y.split_at(n);
        let s = self.tableau.stages();
        let h = self.cfg.h;
        let c = self.tableau.c();
        let a = self.tableau.a();
        let b = self.tableau.b();
        let gt = &self.problem.gtilde;
        let seeds: Vec<Vec<f64>> = (0..s)
            .map(|i| q.iter().zip(qp.iter()).map(|(x, v)| x + h * c[i] * v).collect())
            .collect();
        let map = |stages: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let g_vals: Vec<Vec<f64>> = stages.iter().map(|k| gt(k)).collect();
            (0..s)
                .map(|i| {
                    let mut out = seeds[i].clone();
                    for j in 0..s {
                        let w = a[(i, j)] * (c[i] - c[j]);
                        if w == 0.0 {
                            continue;
                        }
                        for (o, v) in out.iter_mut().zip(g_vals[j].iter()) {
                            *o += h * h * w * v;
                        }
                    }
                    out
                })
                .collect()
        };
        let fp = fixed_point_solve(map, &seeds, &self.cfg)?;
        let g_vals: Vec<Vec<f64>> = fp.stages.iter().map(|k| gt(k)).collect();
        let mut q_next: Vec<f64> = q.iter().zip(qp.iter()).map(|(x, v)| x + h * v).collect();
        let mut qp_next = qp.to_vec();
        for i in 0..s {
            for j in 0..n {
                q_next[j] += h * h * b[i] * (1.0 - c[i]) * g_vals[i][j];
                qp_next[j] += h * b[i] * g_vals[i][j];
            }
        }
        let mut stages = Vec::with_capacity(s);
        for i in 0..s {
            let mut vel = qp.to_vec();
            for j in 0..s {
                if a[(i, j)] == 0.0 {
                    continue;
                }
                for (o, v) in vel.iter_mut().zip(g_vals[j].iter()) {
                    *o += h * a[(i, j)] * v;
                }
            }
            let mut full = fp.stages[i].clone();
            full.extend_from_slice(&vel);
            stages.push(full);
        }
        let mut y_next = q_next;
        y_next.extend_from_slice(&qp_next);
        Ok(StepRecord {
            y_next,
            stages,
            iterations: fp.iterations,
            converged: fp.converged,
            stagnated: fp.stagnated,
            increment_norm: fp.increment_norm,
        })
    }
}

/// One exponential-integrator step on a first-order problem.
pub fn ssei_step(
    p: &VectorFieldProblem,
    t: &ButcherTableau,
    cfg: &SolverConfig,
    y: &[f64],
) -> Result<StepRecord, StepError> {
    SseiStepper::new(p.clone(), t.clone(), cfg.clone())?.step(y)
}

/// One classical Runge–Kutta step on the full field `Ky + g(y)`.
pub fn rk_step(
    p: &VectorFieldProblem,
    t: &ButcherTableau,
    cfg: &SolverConfig,
    y: &[f64],
) -> Result<StepRecord, StepError> {
    RkStepper::new(p.clone(), t.clone(), cfg.clone()).step(y)
}

/// One adapted exponential-integrator step on `(q, q')`.
pub fn second_order_ei_step(
    p: &SecondOrderProblem,
    t: &ButcherTableau,
    cfg: &SolverConfig,
    y: &[f64],
) -> Result<StepRecord, StepError> {
    AdaptedEiStepper::new(p.clone(), t.clone(), cfg.clone())?.step(y)
}

/// One trigonometric-integrator step on `(q, p)`.
pub fn erkn_step(
    p: &PartitionedProblem,
    t: &ButcherTableau,
    cfg: &SolverConfig,
    y: &[f64],
) -> Result<StepRecord, StepError> {
    ErknStepper::new(p.clone(), t.clone(), cfg.clone())?.step(y)
}

/// One Runge–Kutta–Nyström step on `(q, q')` (requires `Omega = 0`).
pub fn rkn_step(
    p: &PartitionedProblem,
    t: &ButcherTableau,
    cfg: &SolverConfig,
    y: &[f64],
) -> Result<StepRecord, StepError> {
    RknStepper::new(p.clone(), t.clone(), cfg.clone())?.step(y)
}

/// A completed (or partial, on abort) run of a one-step method.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub records: Vec<StepRecord>,
    /// Number of steps whose fixed-point iteration exhausted its budget
    /// without meeting the tolerance.
    pub nonconverged_steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least y0")
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }
}

/// An integration that stopped early; the partial trajectory retains every
/// accepted step.
#[derive(Debug)]
pub struct IntegrateAbort {
    pub error: StepError,
    pub partial: Trajectory,
}

impl fmt::Display for IntegrateAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "integration aborted after {} accepted steps: {}",
            self.partial.steps(),
            self.error
        )
    }
}

impl std::error::Error for IntegrateAbort {}

/// Apply `stepper` from `y0` until `t_end = m·h`, recording every step.
/// `t_end` must align with the step grid to within `1e−9 · max(1, |t_end|)`.
/// Fixed-point non-convergence is counted but does not abort; divergence or
/// a non-finite state does, with the partial trajectory attached.
pub fn integrate(
    stepper: &dyn OneStepMethod,
    y0: &[f64],
    t_end: f64,
) -> Result<Trajectory, Box<IntegrateAbort>> {
    let h = stepper.step_size();
    let m = (t_end / h).round();
    let mut trajectory = Trajectory {
        times: vec![0.0],
        states: vec![y0.to_vec()],
        records: Vec::new(),
        nonconverged_steps: 0,
    };
    if t_end < 0.0 || m < 0.0 || (m * h - t_end).abs() > GRID_ALIGNMENT_TOL * t_end.abs().max(1.0)
    {
        return Err(Box::new(IntegrateAbort {
            error: StepError::GridMisaligned { h, t_end },
            partial: trajectory,
        }));
    }
    let m = m as usize;
    let mut y = y0.to_vec();
    for n in 0..m {
        match stepper.step(&y) {
            Ok(record) => {
                y = record.y_next.clone();
                if !record.converged {
                    trajectory.nonconverged_steps += 1;
                }
                trajectory.times.push((n + 1) as f64 * h);
                trajectory.states.push(record.y_next.clone());
                trajectory.records.push(record);
            }
            Err(error) => {
                return Err(Box::new(IntegrateAbort {
                    error,
                    partial: trajectory,
                }));
            }
        }
    }
    Ok(trajectory)
}

/// Convenience wrapper matching the flat call shape
/// `integrate(problem, tableau, cfg, y0, t_end)` for the exponential
/// integrator, the most common configuration.
pub fn integrate_ssei(
    p: &VectorFieldProblem,
    t: &ButcherTableau,
    cfg: &SolverConfig,
    y0: &[f64],
    t_end: f64,
) -> Result<Trajectory, Box<IntegrateAbort>> {
    let stepper = match SseiStepper::new(p.clone(), t.clone(), cfg.clone()) {
        Ok(s) => s,
        Err(error) => {
            return Err(Box::new(IntegrateAbort {
                error,
                partial: Trajectory {
                    times: vec![0.0],
                    states: vec![y0.to_vec()],
                    records: Vec::new(),
                    nonconverged_steps: 0,
                },
            }))
        }
    };
    integrate(&stepper, y0, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfun::expm;
    use crate::tableau::{equal_node_two_stage, gauss_legendre};

    fn zero_fn(n: usize) -> StateFn {
        Arc::new(move |_: &[f64]| vec![0.0; n])
    }

    fn zero_jac(n: usize) -> JacobianFn {
        Arc::new(move |_: &[f64]| Matrix::zeros(n, n))
    }

    fn linear_test_problem() -> VectorFieldProblem {
        let k = Matrix::from_rows(&[vec![0.0, 1.0], vec![-4.0, 0.0]]);
        VectorFieldProblem::new("rotation", k, zero_fn(2), zero_jac(2))
    }

    fn cubic_problem() -> VectorFieldProblem {
        // y' = Ky + g(y) with K a rotation and a cubic coupling; divergence
        // free because g' is lower triangular with zero diagonal.
        let k = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let g: StateFn = Arc::new(|y: &[f64]| vec![0.0, 0.3 * y[0] * y[0] * y[0]]);
        let g_jac: JacobianFn = Arc::new(|y: &[f64]| {
            let mut m = Matrix::zeros(2, 2);
            m[(1, 0)] = 0.9 * y[0] * y[0];
            m
        });
        VectorFieldProblem::new("cubic", k, g, g_jac)
    }

    #[test]
    fn fixed_point_identity_map_converges_immediately() {
        let cfg = SolverConfig::new(0.1);
        let initial = vec![vec![1.0, -2.0], vec![0.5, 3.0]];
        let out = fixed_point_solve(|x| x.to_vec(), &initial, &cfg).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.stages, initial);
        assert_eq!(out.increment_norm, 0.0);
    }

    #[test]
    fn fixed_point_affine_contraction_reaches_two() {
        let cfg = SolverConfig::new(0.1);
        let out = fixed_point_solve(
            |x| vec![vec![0.5 * x[0][0] + 1.0]],
            &[vec![0.0]],
            &cfg,
        )
        .unwrap();
        assert!(out.converged, "increment history should reach tolerance");
        assert!(out.iterations <= 60, "took {} iterations", out.iterations);
        assert!((out.stages[0][0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_expansion_reports_divergence() {
        let cfg = SolverConfig::new(0.1);
        let err = fixed_point_solve(
            |x| vec![vec![2.0 * x[0][0] + 1.0]],
            &[vec![1.0]],
            &cfg,
        )
        .unwrap_err();
        match err {
            StepError::Divergence { stage, iteration } => {
                assert_eq!(stage, 0);
                assert!(iteration <= 100);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fixed_point_nonconvergence_is_recorded_not_fatal() {
        // A slowly contracting map that cannot reach 1e-16 in 5 sweeps.
        let cfg = SolverConfig::new(0.1).with_max_iter(5);
        let out = fixed_point_solve(
            |x| vec![vec![0.9 * x[0][0] + 0.1]],
            &[vec![0.0]],
            &cfg,
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
        assert!(out.increment_norm > cfg.fp_tol);
    }

    #[test]
    fn ssei_with_zero_nonlinearity_is_exact_linear_flow_in_one_iteration() {
        let p = linear_test_problem();
        let t = gauss_legendre(2).unwrap();
        let cfg = SolverConfig::new(0.05);
        let y = vec![1.0, -0.5];
        let rec = ssei_step(&p, &t, &cfg, &y).unwrap();
        assert!(rec.converged);
        assert_eq!(rec.iterations, 1);
        let expected = expm(&p.linear.scale(cfg.h)).unwrap().mul_vec(&y);
        for (a, b) in rec.y_next.iter().zip(expected.iter()) {
            assert_eq!(a, b, "linear flow must be reproduced exactly");
        }
    }

    #[test]
    fn ssei_at_zero_linear_part_matches_rk_step() {
        let g: StateFn = Arc::new(|y: &[f64]| vec![y[1], -y[0].sin()]);
        let g_jac: JacobianFn = Arc::new(|y: &[f64]| {
            Matrix::from_rows(&[vec![0.0, 1.0], vec![-y[0].cos(), 0.0]])
        });
        let p = VectorFieldProblem::new("pendulum", Matrix::zeros(2, 2), g, g_jac);
        let t = gauss_legendre(2).unwrap();
        let cfg = SolverConfig::new(0.02);
        let y = vec![0.4, -0.3];
        let ei = ssei_step(&p, &t, &cfg, &y).unwrap();
        let rk = rk_step(&p, &t, &cfg, &y).unwrap();
        assert!(ei.converged && rk.converged);
        for (a, b) in ei.y_next.iter().zip(rk.y_next.iter()) {
            assert!((a - b).abs() < 1e-14, "|{a} - {b}|");
        }
    }

    #[test]
    fn rk_step_on_zero_field_returns_state() {
        let p = VectorFieldProblem::new("still", Matrix::zeros(3, 3), zero_fn(3), zero_jac(3));
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.5);
        let y = vec![1.0, 2.0, 3.0];
        let rec = rk_step(&p, &t, &cfg, &y).unwrap();
        assert_eq!(rec.y_next, y);
        assert_eq!(rec.iterations, 1);
    }

    #[test]
    fn rk_midpoint_on_scalar_linear_problem_matches_closed_form() {
        // Midpoint on y' = λy gives y (1 + hλ/2) / (1 − hλ/2).
        let lambda = -0.7;
        let p = VectorFieldProblem::new(
            "scalar",
            Matrix::from_rows(&[vec![lambda]]),
            zero_fn(1),
            zero_jac(1),
        );
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.1);
        let rec = rk_step(&p, &t, &cfg, &[2.0]).unwrap();
        let expected = 2.0 * (1.0 + 0.5 * cfg.h * lambda) / (1.0 - 0.5 * cfg.h * lambda);
        assert!((rec.y_next[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn ssei_implicit_stage_count_exceeds_one_on_nonlinear_problem() {
        let p = cubic_problem();
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.05);
        let rec = ssei_step(&p, &t, &cfg, &[0.8, 0.2]).unwrap();
        assert!(rec.converged);
        assert!(rec.iterations > 1, "ā_11 = a_11 I ≠ 0 forces iteration");
    }

    fn second_order_test_problem() -> SecondOrderProblem {
        // Scalar q'' − nq' + ωq = −∇V₁(q) with a cubic gradient.
        let n_mat = Matrix::from_rows(&[vec![-0.02]]);
        let omega = Matrix::from_rows(&[vec![200.0]]);
        let grad: StateFn = Arc::new(|q: &[f64]| vec![-0.5 * q[0] * q[0] + q[0] * q[0] * q[0]]);
        let grad_jac: JacobianFn =
            Arc::new(|q: &[f64]| Matrix::from_rows(&[vec![-q[0] + 3.0 * q[0] * q[0]]]));
        SecondOrderProblem::new("osc", n_mat, omega, grad, grad_jac)
    }

    #[test]
    fn adapted_ei_with_zero_gradient_propagates_by_exp_blocks() {
        let p = SecondOrderProblem::new(
            "free",
            Matrix::from_rows(&[vec![0.3]]),
            Matrix::from_rows(&[vec![2.0]]),
            zero_fn(1),
            zero_jac(1),
        );
        let t = gauss_legendre(2).unwrap();
        let cfg = SolverConfig::new(0.05);
        let rec = second_order_ei_step(&p, &t, &cfg, &[1.0, -0.5]).unwrap();
        assert_eq!(rec.iterations, 1);
        let (e11, e12, e21, e22) = second_order_exp_blocks(cfg.h, &p.n_mat, &p.omega).unwrap();
        let q = e11[(0, 0)] * 1.0 + e12[(0, 0)] * -0.5;
        let qp = e21[(0, 0)] * 1.0 + e22[(0, 0)] * -0.5;
        assert!((rec.y_next[0] - q).abs() < 1e-15);
        assert!((rec.y_next[1] - qp).abs() < 1e-15);
    }

    #[test]
    fn adapted_ei_matches_ssei_on_first_order_embedding() {
        let p = second_order_test_problem();
        let embedded = p.embed();
        let t = gauss_legendre(2).unwrap();
        let cfg = SolverConfig::new(0.01);
        let mut y_adapted = vec![1.0, 15.199];
        let mut y_embedded = y_adapted.clone();
        let adapted = AdaptedEiStepper::new(p, t.clone(), cfg.clone()).unwrap();
        let ssei = SseiStepper::new(embedded, t, cfg).unwrap();
        for _ in 0..10 {
            let ra = adapted.step(&y_adapted).unwrap();
            let rs = ssei.step(&y_embedded).unwrap();
            assert!(ra.converged && rs.converged);
            // Stage q-components agree too (full embedded stages recorded).
            for (sa, ss) in ra.stages.iter().zip(rs.stages.iter()) {
                for (a, b) in sa.iter().zip(ss.iter()) {
                    assert!((a - b).abs() < 1e-11, "stage mismatch |{a} - {b}|");
                }
            }
            y_adapted = ra.y_next;
            y_embedded = rs.y_next;
        }
        for (a, b) in y_adapted.iter().zip(y_embedded.iter()) {
            assert!((a - b).abs() < 1e-11, "state mismatch |{a} - {b}|");
        }
    }

    #[test]
    fn adapted_ei_one_stage_is_explicit_when_omega_is_zero() {
        // q'' − Nq' = −∇V₁(q): the one-stage scheme's only stage coefficient
        // is the 12-block of the identity, which vanishes.
        let n_mat = Matrix::from_rows(&[vec![0.0, 10.0], vec![-10.0, 0.0]]);
        let omega = Matrix::zeros(2, 2);
        let grad: StateFn = Arc::new(|q: &[f64]| vec![q[0] * q[1], q[0] - q[1]]);
        let grad_jac: JacobianFn = Arc::new(|q: &[f64]| {
            Matrix::from_rows(&[vec![q[1], q[0]], vec![1.0, -1.0]])
        });
        let p = SecondOrderProblem::new("drift", n_mat, omega, grad, grad_jac);
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.02);
        let rec = second_order_ei_step(&p, &t, &cfg, &[0.7, 1.0, 0.9, 0.5]).unwrap();
        assert!(rec.converged);
        assert_eq!(rec.iterations, 1, "one-stage adapted scheme is explicit");
    }

    fn partitioned_test_problem(omega_diag: f64) -> PartitionedProblem {
        let omega = Matrix::from_rows(&[vec![omega_diag]]);
        let gt: StateFn = Arc::new(|q: &[f64]| vec![2.0 * q[0] * q[0] * q[0]]);
        let gt_jac: JacobianFn = Arc::new(|q: &[f64]| Matrix::from_rows(&[vec![6.0 * q[0] * q[0]]]));
        PartitionedProblem::new("cubic-partitioned", omega, gt, gt_jac)
    }

    #[test]
    fn erkn_with_zero_gtilde_rotates_by_phi_blocks() {
        let omega = Matrix::from_rows(&[vec![4.0]]);
        let p = PartitionedProblem::new("rotor", omega, zero_fn(1), zero_jac(1));
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.1);
        let rec = erkn_step(&p, &t, &cfg, &[1.0, 0.0]).unwrap();
        assert_eq!(rec.iterations, 1);
        // For scalar Ω = ω², the blocks are cos(hω) and sin(hω)/(hω).
        let w = 2.0_f64;
        let h = cfg.h;
        assert!((rec.y_next[0] - (h * w).cos()).abs() < 1e-14);
        assert!((rec.y_next[1] - (-w * (h * w).sin())).abs() < 1e-14);
    }

    #[test]
    fn erkn_matches_ssei_on_first_order_embedding() {
        let p = partitioned_test_problem(9.0);
        let embedded = p.embed();
        let t = equal_node_two_stage();
        let cfg = SolverConfig::new(0.01);
        let erkn = ErknStepper::new(p, t.clone(), cfg.clone()).unwrap();
        let ssei = SseiStepper::new(embedded, t, cfg).unwrap();
        let mut ye = vec![0.8, -0.1];
        let mut ys = ye.clone();
        for _ in 0..20 {
            let re = erkn.step(&ye).unwrap();
            let rs = ssei.step(&ys).unwrap();
            for (sa, sb) in re.stages.iter().zip(rs.stages.iter()) {
                for (a, b) in sa.iter().zip(sb.iter()) {
                    assert!((a - b).abs() < 1e-12, "stage mismatch |{a} - {b}|");
                }
            }
            ye = re.y_next;
            ys = rs.y_next;
        }
        for (a, b) in ye.iter().zip(ys.iter()) {
            assert!((a - b).abs() < 1e-12, "state mismatch |{a} - {b}|");
        }
    }

    #[test]
    fn erkn_equal_node_tableau_runs_explicitly() {
        let p = partitioned_test_problem(9.0);
        let t = equal_node_two_stage();
        let cfg = SolverConfig::new(0.05);
        let rec = erkn_step(&p, &t, &cfg, &[0.8, -0.1]).unwrap();
        assert!(rec.converged);
        assert_eq!(rec.iterations, 1, "stage coefficients a_ij(c_i−c_j) all vanish");
    }

    #[test]
    fn erkn_with_zero_omega_reduces_to_rkn_exactly() {
        let p = partitioned_test_problem(0.0);
        for t in [gauss_legendre(1).unwrap(), equal_node_two_stage()] {
            let cfg = SolverConfig::new(0.05);
            let y = vec![0.8, -0.1];
            let re = erkn_step(&p, &t, &cfg, &y).unwrap();
            let rn = rkn_step(&p, &t, &cfg, &y).unwrap();
            assert_eq!(re.y_next, rn.y_next, "ϕ₀(0) = ϕ₁(0) = I must be exact");
            assert_eq!(re.stages, rn.stages);
        }
    }

    #[test]
    fn rkn_with_zero_gtilde_drifts_in_a_straight_line() {
        let p = PartitionedProblem::new(
            "free-drift",
            Matrix::zeros(2, 2),
            zero_fn(2),
            zero_jac(2),
        );
        let t = gauss_legendre(2).unwrap();
        let cfg = SolverConfig::new(0.25);
        let rec = rkn_step(&p, &t, &cfg, &[1.0, 2.0, 0.4, -0.8]).unwrap();
        assert_eq!(rec.y_next, vec![1.1, 1.8, 0.4, -0.8]);
    }

    #[test]
    fn rkn_midpoint_hand_check_on_harmonic_oscillator() {
        // q'' = −q, midpoint, h = 0.1 from (1, 0):
        //   Q₁ = 1 (the a_11(c₁−c₁) coefficient vanishes),
        //   q₁ = 1 + 0 + 0.01·(1·(1/2))·(−1) = 0.995,  q'₁ = 0 + 0.1·1·(−1) = −0.1.
        let omega = Matrix::zeros(1, 1);
        let gt: StateFn = Arc::new(|q: &[f64]| vec![-q[0]]);
        let gt_jac: JacobianFn = Arc::new(|_: &[f64]| Matrix::from_rows(&[vec![-1.0]]));
        let p = PartitionedProblem::new("harmonic", omega, gt, gt_jac);
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.1);
        let rec = rkn_step(&p, &t, &cfg, &[1.0, 0.0]).unwrap();
        assert_eq!(rec.iterations, 1);
        assert!((rec.stages[0][0] - 1.0).abs() < 1e-16);
        assert!((rec.y_next[0] - 0.995).abs() < 1e-16);
        assert!((rec.y_next[1] + 0.1).abs() < 1e-16);
    }

    #[test]
    fn rkn_rejects_nonzero_stiffness() {
        let p = partitioned_test_problem(4.0);
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.1);
        assert!(rkn_step(&p, &t, &cfg, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn integrate_zero_steps_returns_initial_state_only() {
        let p = linear_test_problem();
        let stepper =
            SseiStepper::new(p, gauss_legendre(1).unwrap(), SolverConfig::new(0.1)).unwrap();
        let traj = integrate(&stepper, &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(traj.states, vec![vec![1.0, 2.0]]);
        assert_eq!(traj.times, vec![0.0]);
        assert!(traj.records.is_empty());
    }

    #[test]
    fn integrate_linear_problem_hits_exact_endpoint() {
        let p = linear_test_problem();
        let cfg = SolverConfig::new(0.01);
        let stepper = SseiStepper::new(p.clone(), gauss_legendre(1).unwrap(), cfg).unwrap();
        let y0 = vec![1.0, -0.5];
        let t_end = 2.0;
        let traj = integrate(&stepper, &y0, t_end).unwrap();
        assert_eq!(traj.steps(), 200);
        let expected = expm(&p.linear.scale(t_end)).unwrap().mul_vec(&y0);
        for (a, b) in traj.final_state().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "|{a} - {b}|");
        }
        assert_eq!(traj.nonconverged_steps, 0);
    }

    #[test]
    fn integrate_rejects_misaligned_endpoint() {
        let p = linear_test_problem();
        let stepper =
            SseiStepper::new(p, gauss_legendre(1).unwrap(), SolverConfig::new(0.1)).unwrap();
        let err = integrate(&stepper, &[1.0, 0.0], 0.25).unwrap_err();
        match err.error {
            StepError::GridMisaligned { .. } => {}
            other => panic!("expected grid misalignment, got {other:?}"),
        }
        assert_eq!(err.partial.states.len(), 1);
    }

    #[test]
    fn integrate_attaches_partial_trajectory_on_divergence() {
        // Strongly expanding cubic growth: the fixed point diverges once the
        // state leaves the contraction basin.
        let g: StateFn = Arc::new(|y: &[f64]| vec![y[0] * y[0] * y[0]]);
        let g_jac: JacobianFn = Arc::new(|y: &[f64]| Matrix::from_rows(&[vec![3.0 * y[0] * y[0]]]));
        let p = VectorFieldProblem::new("blowup", Matrix::from_rows(&[vec![1.0]]), g, g_jac);
        let stepper =
            SseiStepper::new(p, gauss_legendre(1).unwrap(), SolverConfig::new(0.5)).unwrap();
        let err = integrate(&stepper, &[1.5], 10.0).unwrap_err();
        match err.error {
            StepError::Divergence { .. } => {}
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(err.partial.states.len() >= 1);
        assert!(err.partial.states.len() < 21, "must abort before completing");
    }

    #[test]
    fn step_rejects_wrong_dimension() {
        let p = linear_test_problem();
        let t = gauss_legendre(1).unwrap();
        let cfg = SolverConfig::new(0.1);
        match ssei_step(&p, &t, &cfg, &[1.0]) {
            Err(StepError::DimensionMismatch { expected: 2, got: 1 }) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }
}
