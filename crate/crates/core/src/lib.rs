//! Volume-preserving exponential integrators with exact step-Jacobian
//! verification.
//!
//! The crate integrates systems of the form `y' = K y + g(y)` with
//! exponential one-step methods whose coefficients are matrix exponentials
//! of the linear part, and checks — per accepted step and in closed form —
//! whether the discrete flow preserves phase-space volume.
//!
//! Module map:
//!
//! * [`matfun`] — dense matrices, `expm`, the φ-family, trigonometric
//!   ϕ-blocks, block solves and determinants.
//! * [`tableau`] — Butcher tableaux, structural predicates (symplecticity,
//!   equal nodes, nonzero weights), order conditions, and the exponential
//!   coefficient construction `ā_ij = a_ij e^{(c_i−c_j)hK}`.
//! * [`integrators`] — the steppers (exponential, plain implicit RK, the
//!   adapted second-order exponential method, ERKN and RKN), the fixed-point
//!   stage solver, and the trajectory driver.
//! * [`vpcheck`] — exact step Jacobians, determinant ratios, the
//!   volume-preservation condition residual, vector-field class
//!   verification, and per-run volume drift reports.
//! * [`problems`] — the benchmark problems (with a Jacobi elliptic kernel
//!   for the one with a closed-form solution), synthetic block-triangular
//!   fields, and self-convergent reference solutions.

pub mod integrators;
pub mod matfun;
pub mod problems;
pub mod tableau;
pub mod vpcheck;

pub use integrators::{
    integrate, IntegrateAbort, PartitionedProblem, SecondOrderProblem, SolverConfig, StepError,
    StepRecord, Trajectory, VectorFieldProblem,
};
pub use matfun::{BlockMatrix, MatError, Matrix};
pub use problems::{benchmark, benchmark_names, Benchmark, ProblemError, ReferenceQuality};
pub use tableau::ButcherTableau;
pub use vpcheck::{ClassCertificate, FieldClass, VolumeReport};
