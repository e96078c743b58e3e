//! Benchmark problems with exact or self-converged reference solutions,
//! plus constructors for synthetic block-triangular test fields.
//!
//! The four primary benchmarks:
//!
//! * `duffing` — `q'' = −(ω²+k²)q + 2k²q³` with `k = 0.07`, `ω = 20` and the
//!   exact Jacobi-elliptic solution `q(t) = sn(ωt; k/ω)`.
//! * `divfree3d` — a stiff three-dimensional divergence-free field with
//!   rotation frequency `ω = 100`, plainly similar to its negative under the
//!   anti-diagonal permutation (class `S`).
//! * `helmholtz` — the damped Helmholtz–Duffing oscillator
//!   `q'' + 2νq' + Aq = −Bq² − εq³`; its linear part has trace `−2ν ≠ 0`, so
//!   the flow contracts volume at the exact rate `e^{−2νh}` per step.
//! * `charged-particle` — `x'' = x' × B + F(x)` with `B = (0,0,10)` and the
//!   planar Coulomb-type force `F(x) = (x₁,x₂,0)/(100 r³)`; its first-order
//!   embedding is transpose-similar to its negative (class `H`).
//!
//! Two further partitioned problems exercise the Nyström steppers: the 1-D
//! cubic oscillator `q'' = −q³` and the `B = 0` variant of the charged
//! particle.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::integrators::{
    ExactFn, JacobianFn, OneStepMethod, PartitionedProblem, SecondOrderProblem, SolverConfig,
    SseiStepper, StateFn, VectorFieldProblem,
};
use crate::matfun::Matrix;
use crate::tableau::gauss_legendre;
use crate::vpcheck::ClassCertificate;

/// Required relative agreement between successive reference refinements.
pub const REFERENCE_AGREEMENT_TOL: f64 = 1e-10;

/// Errors from problem construction and reference computation.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemError {
    /// The elliptic modulus must lie in `[0, 1)`.
    ModulusOutOfRange { modulus: f64 },
    /// Successive reference refinements never agreed to the required
    /// tolerance; `best_difference` is the smallest relative gap seen.
    ReferenceUnreliable { best_difference: f64 },
    /// The reference integration itself failed.
    ReferenceAborted { message: String },
    /// No benchmark with this name exists.
    UnknownProblem { name: String },
}

impl std::fmt::Display for ProblemError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemError::ModulusOutOfRange { modulus } => {
                write!(f, "elliptic modulus {modulus} outside [0, 1)")
            }
            ProblemError::ReferenceUnreliable { best_difference } => write!(
                f,
                "reference refinements disagree (best relative difference {best_difference:e})"
            ),
            ProblemError::ReferenceAborted { message } => {
                write!(f, "reference integration failed: {message}")
            }
            ProblemError::UnknownProblem { name } => write!(f, "unknown problem '{name}'"),
        }
    }
}

impl std::error::Error for ProblemError {}

/// Jacobi elliptic functions `(sn, cn, dn)(u; κ)` with modulus `κ` (the
/// identities read `sn² + cn² = 1` and `dn² + κ² sn² = 1`), computed by the
/// arithmetic–geometric mean and the descending Landen recursion.
pub fn jacobi_elliptic(u: f64, modulus: f64) -> Result<(f64, f64, f64), ProblemError> {
    if !(0.0..1.0).contains(&modulus) {
        return Err(ProblemError::ModulusOutOfRange { modulus });
    }
    if modulus == 0.0 {
        return Ok((u.sin(), u.cos(), 1.0));
    }
    let mut a = vec![1.0_f64];
    let mut c = vec![modulus];
    let mut b = (1.0 - modulus * modulus).sqrt();
    while c.last().unwrap().abs() > f64::EPSILON * a.last().unwrap() {
        let an = a.last().unwrap();
        let next_a = 0.5 * (an + b);
        let next_c = 0.5 * (an - b);
        b = (an * b).sqrt();
        a.push(next_a);
        c.push(next_c);
    }
    let levels = a.len() - 1;
    let mut phi = (1u64 << levels) as f64 * a[levels] * u;
    let mut phi_prev = phi;
    for n in (1..=levels).rev() {
        phi_prev = phi;
        let s = (c[n] * phi.sin() / a[n]).clamp(-1.0, 1.0);
        phi = 0.5 * (phi + s.asin());
    }
    let sn = phi.sin();
    let cn = phi.cos();
    let dn = cn / (phi_prev - phi).cos();
    Ok((sn, cn, dn))
}

const DUFFING_K: f64 = 0.07;
const DUFFING_OMEGA: f64 = 20.0;

/// The Duffing oscillator `q'' = −(ω²+k²)q + 2k²q³` in first-order form,
/// with `k = 0.07`, `ω = 20`, the exact solution
/// `(q, q') = (sn(ωt; k/ω), ω·cn·dn)`, and the symplectic-form certificate.
pub fn duffing() -> VectorFieldProblem {
    let (k, w) = (DUFFING_K, DUFFING_OMEGA);
    let lin = Matrix::from_rows(&[vec![0.0, 1.0], vec![-(w * w + k * k), 0.0]]);
    let g: StateFn = Arc::new(move |y: &[f64]| vec![0.0, 2.0 * k * k * y[0] * y[0] * y[0]]);
    let g_jac: JacobianFn = Arc::new(move |y: &[f64]| {
        let mut m = Matrix::zeros(2, 2);
        m[(1, 0)] = 6.0 * k * k * y[0] * y[0];
        m
    });
    let modulus = k / w;
    let exact: ExactFn = Arc::new(move |t: f64| {
        let (sn, cn, dn) =
            jacobi_elliptic(w * t, modulus).expect("fixed modulus 0.0035 is valid");
        vec![sn, w * cn * dn]
    });
    let j = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]);
    VectorFieldProblem::new("duffing", lin, g, g_jac)
        .with_class_cert(ClassCertificate::h_class(j))
        .with_exact(exact)
}

/// The Duffing oscillator as a partitioned system `q'' + Ωq = g̃(q)` with
/// `Ω = ω² + k²` and `g̃(q) = 2k²q³`, for the trigonometric steppers.
pub fn duffing_partitioned() -> PartitionedProblem {
    let (k, w) = (DUFFING_K, DUFFING_OMEGA);
    let omega = Matrix::from_rows(&[vec![w * w + k * k]]);
    let gt: StateFn = Arc::new(move |q: &[f64]| vec![2.0 * k * k * q[0] * q[0] * q[0]]);
    let gt_jac: JacobianFn =
        Arc::new(move |q: &[f64]| Matrix::from_rows(&[vec![6.0 * k * k * q[0] * q[0]]]));
    PartitionedProblem::new("duffing", omega, gt, gt_jac)
}

/// The Duffing oscillator in the damped-oscillator form (here with `N = 0`):
/// `q'' − Nq' + Ωq = −∇V₁(q)` with `∇V₁(q) = −2k²q³`.
pub fn duffing_second_order() -> SecondOrderProblem {
    let (k, w) = (DUFFING_K, DUFFING_OMEGA);
    let n_mat = Matrix::zeros(1, 1);
    let omega = Matrix::from_rows(&[vec![w * w + k * k]]);
    let grad: StateFn = Arc::new(move |q: &[f64]| vec![-2.0 * k * k * q[0] * q[0] * q[0]]);
    let grad_jac: JacobianFn =
        Arc::new(move |q: &[f64]| Matrix::from_rows(&[vec![-6.0 * k * k * q[0] * q[0]]]));
    SecondOrderProblem::new("duffing", n_mat, omega, grad, grad_jac)
}

const DIVFREE_OMEGA: f64 = 100.0;

/// Stiff three-dimensional divergence-free field
/// `y' = Ky + (sin(y₁−y₃), 0, sin(y₁−y₃))` with rotational linear part of
/// frequency `ω = 100`; plainly similar to its negative under the
/// anti-diagonal permutation (class `S`).
pub fn divergence_free_3d() -> VectorFieldProblem {
    let w = DIVFREE_OMEGA;
    let lin = Matrix::from_rows(&[
        vec![0.0, -w, 0.0],
        vec![w, 0.0, -w],
        vec![0.0, w, 0.0],
    ]);
    let g: StateFn = Arc::new(|y: &[f64]| {
        let s = (y[0] - y[2]).sin();
        vec![s, 0.0, s]
    });
    let g_jac: JacobianFn = Arc::new(|y: &[f64]| {
        let c = (y[0] - y[2]).cos();
        Matrix::from_rows(&[vec![c, 0.0, -c], vec![0.0, 0.0, 0.0], vec![c, 0.0, -c]])
    });
    let p = Matrix::from_rows(&[
        vec![0.0, 0.0, 1.0],
        vec![0.0, 1.0, 0.0],
        vec![1.0, 0.0, 0.0],
    ]);
    VectorFieldProblem::new("divfree3d", lin, g, g_jac)
        .with_class_cert(ClassCertificate::s_class(p))
}

/// Damped Helmholtz–Duffing oscillator `q'' + 2νq' + Aq = −Bq² − εq³` with
/// `ν = 0.01`, `A = 200`, `B = −0.5`, `ε = 1`, written as
/// `q'' − Nq' + Ωq = −∇V₁(q)` with `N = −2ν`, `Ω = A`, `∇V₁ = Bq² + εq³`.
/// Its embedded linear part has trace `−2ν`, so each step contracts volume
/// by exactly `e^{−2νh}`.
pub fn helmholtz_duffing() -> SecondOrderProblem {
    let (nu, a_coef, b_coef, eps) = (0.01, 200.0, -0.5, 1.0);
    let n_mat = Matrix::from_rows(&[vec![-2.0 * nu]]);
    let omega = Matrix::from_rows(&[vec![a_coef]]);
    let grad: StateFn =
        Arc::new(move |q: &[f64]| vec![b_coef * q[0] * q[0] + eps * q[0] * q[0] * q[0]]);
    let grad_jac: JacobianFn = Arc::new(move |q: &[f64]| {
        Matrix::from_rows(&[vec![2.0 * b_coef * q[0] + 3.0 * eps * q[0] * q[0]]])
    });
    SecondOrderProblem::new("helmholtz", n_mat, omega, grad, grad_jac)
}

/// Planar Coulomb-type force `F(x) = (x₁, x₂, 0)/(100 r³)`, `r = √(x₁²+x₂²)`.
/// Evaluation on the axis `r = 0` produces infinite components, which the
/// steppers report as divergence.
fn coulomb_force(x: &[f64]) -> Vec<f64> {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let r3 = r2 * r2.sqrt();
    vec![x[0] / (100.0 * r3), x[1] / (100.0 * r3), 0.0]
}

fn coulomb_force_jacobian(x: &[f64]) -> Matrix {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let r5 = r2 * r2 * r2.sqrt();
    let mut m = Matrix::zeros(3, 3);
    m[(0, 0)] = (r2 - 3.0 * x[0] * x[0]) / (100.0 * r5);
    m[(0, 1)] = -3.0 * x[0] * x[1] / (100.0 * r5);
    m[(1, 0)] = m[(0, 1)];
    m[(1, 1)] = (r2 - 3.0 * x[1] * x[1]) / (100.0 * r5);
    m
}

/// Charged particle in the constant magnetic field `B = (0,0,10)`:
/// `x'' = x' × B + F(x)`, i.e. `q'' − Nq' = −∇V₁(q)` with
/// `N = [[0,10,0],[−10,0,0],[0,0,0]]` and `∇V₁ = −F`.
pub fn charged_particle() -> SecondOrderProblem {
    let n_mat = Matrix::from_rows(&[
        vec![0.0, 10.0, 0.0],
        vec![-10.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0],
    ]);
    let omega = Matrix::zeros(3, 3);
    let grad: StateFn = Arc::new(|q: &[f64]| {
        let f = coulomb_force(q);
        vec![-f[0], -f[1], -f[2]]
    });
    let grad_jac: JacobianFn = Arc::new(|q: &[f64]| coulomb_force_jacobian(q).scale(-1.0));
    SecondOrderProblem::new("charged-particle", n_mat, omega, grad, grad_jac)
}

/// The first-order embedding of [`charged_particle`], carrying the
/// transpose-similarity certificate with `P = [[N, −I], [I, 0]]` (valid
/// because the force Jacobian is symmetric and `N` is antisymmetric).
pub fn charged_particle_embedded() -> VectorFieldProblem {
    let second = charged_particle();
    let n = second.dim;
    let mut p = Matrix::zeros(2 * n, 2 * n);
    p.set_block(0, 0, &second.n_mat);
    p.set_block(0, n, &Matrix::identity(n).scale(-1.0));
    p.set_block(n, 0, &Matrix::identity(n));
    second.embed().with_class_cert(ClassCertificate::h_class(p))
}

/// `B = 0` variant of the charged particle: `q'' = F(q)`, a partitioned
/// problem with zero stiffness for the Nyström steppers.
pub fn charged_particle_b0() -> PartitionedProblem {
    let gt: StateFn = Arc::new(|q: &[f64]| coulomb_force(q));
    let gt_jac: JacobianFn = Arc::new(|q: &[f64]| coulomb_force_jacobian(q));
    PartitionedProblem::new("charged-particle-b0", Matrix::zeros(3, 3), gt, gt_jac)
}

/// One-dimensional cubic oscillator `q'' = −q³` as a partitioned problem
/// with zero stiffness.
pub fn cubic_oscillator_1d() -> PartitionedProblem {
    let gt: StateFn = Arc::new(|q: &[f64]| vec![-q[0] * q[0] * q[0]]);
    let gt_jac: JacobianFn =
        Arc::new(|q: &[f64]| Matrix::from_rows(&[vec![-3.0 * q[0] * q[0]]]));
    PartitionedProblem::new("cubic1d", Matrix::zeros(1, 1), gt, gt_jac)
}

/// Affine field `y' = Ly + d`: the nonlinearity is constant, so every stage
/// iteration converges after the first correction and the step Jacobian is
/// exactly `e^{hL}`.
pub fn affine_field(l: Matrix, d: Vec<f64>) -> VectorFieldProblem {
    assert!(l.is_square());
    assert_eq!(l.rows(), d.len());
    let n = d.len();
    let d_arc = Arc::new(d);
    let dc = d_arc.clone();
    let g: StateFn = Arc::new(move |_: &[f64]| dc.as_ref().clone());
    let g_jac: JacobianFn = Arc::new(move |_: &[f64]| Matrix::zeros(n, n));
    VectorFieldProblem::new("affine", l, g, g_jac)
}

/// Planar field with `f'(y) = J·S(y)` for symmetric `S(y) = ∇²(y₁⁴ + y₂²)`:
/// `f = (2y₂, −4y₁³)`. Certified via the degenerate block-triangular tag
/// with an empty leading block, whose trailing relation is exactly the
/// transpose similarity.
pub fn js_gradient_field() -> VectorFieldProblem {
    let g: StateFn = Arc::new(|y: &[f64]| vec![2.0 * y[1], -4.0 * y[0] * y[0] * y[0]]);
    let g_jac: JacobianFn = Arc::new(|y: &[f64]| {
        Matrix::from_rows(&[vec![0.0, 2.0], vec![-12.0 * y[0] * y[0], 0.0]])
    });
    let j = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]);
    VectorFieldProblem::new("js-gradient", Matrix::zeros(2, 2), g, g_jac)
        .with_class_cert(ClassCertificate::f_inf_whole(j))
}

/// Seeded block-triangular field `f(y₁, y₂) = (u(y₁), v(y₁, y₂))` on
/// `ℝ^{m+n}` (`m`, `n` even): `u` is a sum of planar oscillator pairs with
/// cubic Hamiltonian-type nonlinearities (class `H` under the block
/// symplectic form), and `∂_{y₂}v` consists of anti-diagonal pairs with the
/// same certificate; `v` additionally couples to `y₁` through smooth terms
/// that do not affect the class.
pub fn synthetic_f_infinity(m: usize, n: usize, seed: u64) -> VectorFieldProblem {
    assert!(m >= 2 && m % 2 == 0, "leading dimension must be even and ≥ 2");
    assert!(n >= 2 && n % 2 == 0, "trailing dimension must be even and ≥ 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = m + n;
    let u_freq: Vec<f64> = (0..m / 2).map(|_| rng.gen_range(0.5..2.0)).collect();
    let u_cubic: Vec<f64> = (0..m / 2).map(|_| rng.gen_range(0.5..1.5)).collect();
    let v_freq: Vec<f64> = (0..n / 2).map(|_| rng.gen_range(0.5..2.0)).collect();
    let v_cubic: Vec<f64> = (0..n / 2).map(|_| rng.gen_range(0.2..1.0)).collect();
    let couple: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let couple_src: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
    let cross: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let cross_src: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();

    let mut lin = Matrix::zeros(dim, dim);
    for (p, &w) in u_freq.iter().enumerate() {
        lin[(2 * p, 2 * p + 1)] = w;
        lin[(2 * p + 1, 2 * p)] = -w;
    }
    for (q, &w) in v_freq.iter().enumerate() {
        lin[(m + 2 * q, m + 2 * q + 1)] = w;
        lin[(m + 2 * q + 1, m + 2 * q)] = -w;
    }
    for (i, (&c, &src)) in cross.iter().zip(cross_src.iter()).enumerate() {
        lin[(m + i, src)] = c;
    }

    let uc = u_cubic.clone();
    let vc = v_cubic.clone();
    let cp = couple.clone();
    let cs = couple_src.clone();
    let g: StateFn = Arc::new(move |y: &[f64]| {
        let mut out = vec![0.0; y.len()];
        let m = 2 * uc.len();
        for (p, &alpha) in uc.iter().enumerate() {
            out[2 * p + 1] = -alpha * y[2 * p].powi(3);
        }
        for (q, &beta) in vc.iter().enumerate() {
            out[m + 2 * q] = beta * y[m + 2 * q + 1].powi(3);
            out[m + 2 * q + 1] = -beta * y[m + 2 * q].powi(3);
        }
        for (i, (&c, &src)) in cp.iter().zip(cs.iter()).enumerate() {
            out[m + i] += c * y[src].sin();
        }
        out
    });
    let uc = u_cubic.clone();
    let vc = v_cubic.clone();
    let cp = couple.clone();
    let cs = couple_src.clone();
    let g_jac: JacobianFn = Arc::new(move |y: &[f64]| {
        let dim = y.len();
        let m = 2 * uc.len();
        let mut jac = Matrix::zeros(dim, dim);
        for (p, &alpha) in uc.iter().enumerate() {
            jac[(2 * p + 1, 2 * p)] = -3.0 * alpha * y[2 * p] * y[2 * p];
        }
        for (q, &beta) in vc.iter().enumerate() {
            jac[(m + 2 * q, m + 2 * q + 1)] = 3.0 * beta * y[m + 2 * q + 1] * y[m + 2 * q + 1];
            jac[(m + 2 * q + 1, m + 2 * q)] = -3.0 * beta * y[m + 2 * q] * y[m + 2 * q];
        }
        for (i, (&c, &src)) in cp.iter().zip(cs.iter()).enumerate() {
            jac[(m + i, src)] += c * y[src].cos();
        }
        jac
    });

    let mut j_lead = Matrix::zeros(m, m);
    for p in 0..m / 2 {
        j_lead[(2 * p, 2 * p + 1)] = 1.0;
        j_lead[(2 * p + 1, 2 * p)] = -1.0;
    }
    let mut j_tail = Matrix::zeros(n, n);
    for q in 0..n / 2 {
        j_tail[(2 * q, 2 * q + 1)] = 1.0;
        j_tail[(2 * q + 1, 2 * q)] = -1.0;
    }
    let inner = ClassCertificate::h_class(j_lead);
    VectorFieldProblem::new(&format!("synthetic-finf-{seed}"), lin, g, g_jac)
        .with_class_cert(ClassCertificate::f_inf(j_tail, m, inner))
}

/// Reference protocol parameters: the reference grid starts at
/// `experiment_h / 32` and may be halved `extra_refinements` more times in
/// search of two successive endpoints agreeing to `1e−10` relative.
#[derive(Debug, Clone)]
pub struct ReferenceQuality {
    pub experiment_h: f64,
    pub extra_refinements: usize,
}

impl ReferenceQuality {
    pub fn standard(experiment_h: f64) -> Self {
        ReferenceQuality {
            experiment_h,
            extra_refinements: 2,
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative global error `‖y − y_ref‖₂ / ‖y_ref‖₂`; infinite if `y` is not
/// finite (the convention for aborted runs).
pub fn relative_global_error(y: &[f64], y_ref: &[f64]) -> f64 {
    if !y.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let diff: Vec<f64> = y.iter().zip(y_ref.iter()).map(|(a, b)| a - b).collect();
    norm2(&diff) / norm2(y_ref)
}

/// Endpoint reference at `t_end`: the exact solution when the problem has
/// one, otherwise a self-converged two-stage-Gauss exponential run on grids
/// `h_ref, h_ref/2, …` until two successive endpoints agree to `1e−10`
/// relative.
pub fn reference_solution(
    p: &VectorFieldProblem,
    y0: &[f64],
    t_end: f64,
    quality: &ReferenceQuality,
) -> Result<Vec<f64>, ProblemError> {
    if let Some(exact) = &p.exact {
        return Ok(exact(t_end));
    }
    let tableau = gauss_legendre(2).expect("two-stage Gauss tableau");
    // Reference grids can run to millions of steps; advance the endpoint
    // directly instead of storing a full trajectory.
    let endpoint = |h: f64| -> Result<Vec<f64>, ProblemError> {
        let cfg = SolverConfig::new(h);
        let stepper = SseiStepper::new(p.clone(), tableau.clone(), cfg)
            .map_err(|e| ProblemError::ReferenceAborted { message: e.to_string() })?;
        let steps = (t_end / h).round() as usize;
        let mut y = y0.to_vec();
        for _ in 0..steps {
            let rec = stepper
                .step(&y)
                .map_err(|e| ProblemError::ReferenceAborted { message: e.to_string() })?;
            y = rec.y_next;
        }
        Ok(y)
    };
    let mut h = quality.experiment_h / 32.0;
    let mut coarse = endpoint(h)?;
    let mut best = f64::INFINITY;
    for _ in 0..=quality.extra_refinements {
        h /= 2.0;
        let fine = endpoint(h)?;
        let diff = relative_global_error(&coarse, &fine);
        if diff <= REFERENCE_AGREEMENT_TOL {
            return Ok(fine);
        }
        best = best.min(diff);
        coarse = fine;
    }
    Err(ProblemError::ReferenceUnreliable { best_difference: best })
}

/// One registered benchmark: the first-order form is always present; the
/// structured forms are set where the problem provides them.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub description: &'static str,
    pub first_order: VectorFieldProblem,
    pub second_order: Option<SecondOrderProblem>,
    pub partitioned: Option<PartitionedProblem>,
    /// Initial state of the first-order form.
    pub initial: Vec<f64>,
    pub default_h: f64,
    pub default_t_end: f64,
}

/// Names accepted by [`benchmark`].
pub fn benchmark_names() -> &'static [&'static str] {
    &[
        "duffing",
        "divfree3d",
        "helmholtz",
        "charged-particle",
        "charged-particle-b0",
        "cubic1d",
        "synthetic-finf",
    ]
}

/// Look up a benchmark by name.
pub fn benchmark(name: &str) -> Result<Benchmark, ProblemError> {
    match name {
        "duffing" => Ok(Benchmark {
            name: "duffing",
            description: "Duffing oscillator, exact elliptic solution, transpose-similar (H)",
            first_order: duffing(),
            second_order: Some(duffing_second_order()),
            partitioned: Some(duffing_partitioned()),
            initial: vec![0.0, DUFFING_OMEGA],
            default_h: 1.0 / 200.0,
            default_t_end: 100.0,
        }),
        "divfree3d" => Ok(Benchmark {
            name: "divfree3d",
            description: "stiff 3-D divergence-free field, plain-similar (S)",
            first_order: divergence_free_3d(),
            second_order: None,
            partitioned: None,
            initial: vec![0.5, 0.5, 0.5],
            default_h: 1.0 / 100.0,
            default_t_end: 100.0,
        }),
        "helmholtz" => Ok(Benchmark {
            name: "helmholtz",
            description: "damped Helmholtz–Duffing oscillator, volume-contracting",
            first_order: helmholtz_duffing().embed(),
            second_order: Some(helmholtz_duffing()),
            partitioned: None,
            initial: vec![1.0, 15.199],
            default_h: 1.0 / 100.0,
            default_t_end: 10.0,
        }),
        "charged-particle" => Ok(Benchmark {
            name: "charged-particle",
            description: "charged particle in a constant magnetic field, embedding in H",
            first_order: charged_particle_embedded(),
            second_order: Some(charged_particle()),
            partitioned: None,
            initial: vec![0.7, 1.0, 0.1, 0.9, 0.5, 0.4],
            default_h: 1.0 / 200.0,
            default_t_end: 10.0,
        }),
        "charged-particle-b0" => Ok(Benchmark {
            name: "charged-particle-b0",
            description: "charged particle without magnetic field, separable (Nyström form)",
            first_order: charged_particle_b0().embed(),
            second_order: None,
            partitioned: Some(charged_particle_b0()),
            initial: vec![0.7, 1.0, 0.1, 0.9, 0.5, 0.4],
            default_h: 0.05,
            default_t_end: 10.0,
        }),
        "cubic1d" => Ok(Benchmark {
            name: "cubic1d",
            description: "one-dimensional cubic oscillator q'' = −q³ (Nyström form)",
            first_order: cubic_oscillator_1d().embed(),
            second_order: None,
            partitioned: Some(cubic_oscillator_1d()),
            initial: vec![1.0, 0.5],
            default_h: 0.05,
            default_t_end: 50.0,
        }),
        "synthetic-finf" => Ok(Benchmark {
            name: "synthetic-finf",
            description: "seeded block-triangular divergence-free field (F_inf)",
            first_order: synthetic_f_infinity(2, 2, 42),
            second_order: None,
            partitioned: None,
            initial: vec![0.4, -0.3, 0.2, 0.5],
            default_h: 0.02,
            default_t_end: 10.0,
        }),
        other => Err(ProblemError::UnknownProblem { name: other.to_string() }),
    }
}
