//! Dense real matrices and the matrix functions the integrators are built
//! on: the exponential `expm`, the exponential φ-family, the
//! trigonometric-type ϕ-blocks, the partitioned exponential of second-order
//! systems, determinants and block solves.
//!
//! Every matrix in this crate is small (benchmark dimensions ≤ 6, stage
//! systems ≤ 12), so the kernels favour robustness and auditability over
//! asymptotic speed: `expm` is scaling-and-squaring with a Taylor kernel,
//! determinants use partially pivoted elimination with exact sign tracking,
//! and φ-functions are read off an augmented block exponential instead of
//! the cancellation-prone power series.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

/// Errors produced by the matrix kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum MatError {
    /// The operation requires a square matrix.
    NotSquare { rows: usize, cols: usize },
    /// Operand shapes are incompatible.
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// The input contains NaN or infinite entries, or the result overflowed.
    NonFinite,
    /// The scaling budget of `expm` cannot reduce the norm to the kernel radius.
    NormTooLarge { norm: f64 },
    /// Elimination found no usable pivot in the given column.
    Singular { pivot: usize },
    /// The requested function order is not implemented.
    UnsupportedOrder { requested: usize, max: usize },
    /// `second_order_exp_blocks` requires the two coefficient matrices to commute.
    NonCommuting { residual: f64 },
}

impl fmt::Display for MatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatError::NotSquare { rows, cols } => {
                write!(f, "matrix is {rows}x{cols}, expected square")
            }
            MatError::ShapeMismatch { left, right } => write!(
                f,
                "incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            MatError::NonFinite => write!(f, "matrix has non-finite entries"),
            MatError::NormTooLarge { norm } => {
                write!(f, "norm {norm:e} exceeds the exponential scaling budget")
            }
            MatError::Singular { pivot } => {
                write!(f, "matrix is singular (no pivot in column {pivot})")
            }
            MatError::UnsupportedOrder { requested, max } => {
                write!(f, "function order {requested} not supported (max {max})")
            }
            MatError::NonCommuting { residual } => write!(
                f,
                "coefficient matrices do not commute (scaled residual {residual:e})"
            ),
        }
    }
}

impl std::error::Error for MatError {}

/// Dense real matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from explicit rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        assert!(cols >= 1, "matrix needs at least one column");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Build entry-wise from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Diagonal matrix from the given entries.
    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Matrix::zeros(entries.len(), entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Scalar multiple.
    pub fn scale(&self, factor: f64) -> Matrix {
        let mut out = self.clone();
        for x in &mut out.data {
            *x *= factor;
        }
        out
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matrix-vector shape mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry-wise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "shape mismatch in comparison"
        );
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Copy of the sub-block starting at (r0, c0) with the given shape.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Matrix::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Overwrite the sub-block starting at (r0, c0) with `b`.
    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        assert!(
            r0 + b.rows <= self.rows && c0 + b.cols <= self.cols,
            "block out of range"
        );
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Row-major entries as a slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Determinant by partially pivoted elimination with exact sign tracking.
    ///
    /// Singular input yields exactly `0.0`; no error path.
    pub fn det(&self) -> f64 {
        assert!(self.is_square(), "determinant requires a square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = a[(col, col)].abs();
            for r in col + 1..n {
                let v = a[(r, col)].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = r;
                }
            }
            if pivot_val == 0.0 {
                return 0.0;
            }
            if pivot_row != col {
                for j in 0..n {
                    let tmp = a[(col, j)];
                    a[(col, j)] = a[(pivot_row, j)];
                    a[(pivot_row, j)] = tmp;
                }
                det = -det;
            }
            let p = a[(col, col)];
            det *= p;
            for r in col + 1..n {
                let factor = a[(r, col)] / p;
                if factor != 0.0 {
                    for j in col + 1..n {
                        a[(r, j)] -= factor * a[(col, j)];
                    }
                }
            }
        }
        det
    }

    /// Inverse via `solve` against the identity.
    pub fn inverse(&self) -> Result<Matrix, MatError> {
        if !self.is_square() {
            return Err(MatError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        solve(self, &Matrix::identity(self.rows))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in +");
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&rhs.data) {
            *x += y;
        }
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in -");
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&rhs.data) {
            *x -= y;
        }
        out
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "shape mismatch in *");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik != 0.0 {
                    for j in 0..rhs.cols {
                        out[(i, j)] += aik * rhs[(k, j)];
                    }
                }
            }
        }
        out
    }
}

/// Solve `A X = B` for possibly many right-hand sides by partially pivoted
/// elimination.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, MatError> {
    if !a.is_square() {
        return Err(MatError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if a.rows != b.rows {
        return Err(MatError::ShapeMismatch {
            left: (a.rows, a.cols),
            right: (b.rows, b.cols),
        });
    }
    let n = a.rows;
    let m = b.cols;
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lhs[(col, col)].abs();
        for r in col + 1..n {
            let v = lhs[(r, col)].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == 0.0 {
            return Err(MatError::Singular { pivot: col });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = lhs[(col, j)];
                lhs[(col, j)] = lhs[(pivot_row, j)];
                lhs[(pivot_row, j)] = tmp;
            }
            for j in 0..m {
                let tmp = rhs[(col, j)];
                rhs[(col, j)] = rhs[(pivot_row, j)];
                rhs[(pivot_row, j)] = tmp;
            }
        }
        let p = lhs[(col, col)];
        for r in col + 1..n {
            let factor = lhs[(r, col)] / p;
            if factor != 0.0 {
                for j in col..n {
                    lhs[(r, j)] -= factor * lhs[(col, j)];
                }
                for j in 0..m {
                    rhs[(r, j)] -= factor * rhs[(col, j)];
                }
            }
        }
    }
    let mut x = Matrix::zeros(n, m);
    for j in 0..m {
        for i in (0..n).rev() {
            let mut acc = rhs[(i, j)];
            for k in i + 1..n {
                acc -= lhs[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = acc / lhs[(i, i)];
        }
    }
    Ok(x)
}

/// Radius to which `expm` scales its argument before the Taylor kernel.
const EXPM_KERNEL_RADIUS: f64 = 0.25;
/// Hard cap on the number of squarings (range guard).
const EXPM_MAX_SQUARINGS: u32 = 64;
/// Taylor terms; with norm ≤ 0.25 the series reaches machine precision well
/// before this.
const EXPM_MAX_TERMS: usize = 40;

/// Matrix exponential by scaling and squaring with a Taylor kernel.
///
/// The argument is halved until its infinity norm is at most 0.25, the
/// series is summed to machine precision, and the result squared back.
pub fn expm(m: &Matrix) -> Result<Matrix, MatError> {
    if !m.is_square() {
        return Err(MatError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if !m.is_finite() {
        return Err(MatError::NonFinite);
    }
    let norm = m.inf_norm();
    let mut squarings = 0u32;
    while norm * 0.5f64.powi(squarings as i32) > EXPM_KERNEL_RADIUS {
        squarings += 1;
        if squarings > EXPM_MAX_SQUARINGS {
            return Err(MatError::NormTooLarge { norm });
        }
    }
    let scaled = m.scale(0.5f64.powi(squarings as i32));
    let n = m.rows;
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=EXPM_MAX_TERMS {
        term = (&term * &scaled).scale(1.0 / k as f64);
        result = &result + &term;
        if term.max_abs() <= f64::EPSILON * result.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    if !result.is_finite() {
        return Err(MatError::NormTooLarge { norm });
    }
    Ok(result)
}

/// Exponential φ-function `φ_k(M)`; `φ_0 = expm`, `φ_k(0) = I/k!`.
///
/// For `k ≥ 1` the value is read off the exponential of the augmented block
/// matrix `[[M, I, 0, …], [0, 0, I, …], …]`, whose top-right block is
/// exactly `φ_k(M)`. This sidesteps the catastrophic cancellation of the
/// naive series `(e^z − 1 − z − …)/z^k` at small and mixed-scale arguments.
pub fn phi(k: usize, m: &Matrix) -> Result<Matrix, MatError> {
    if !m.is_square() {
        return Err(MatError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if k == 0 {
        return expm(m);
    }
    let n = m.rows;
    let dim = (k + 1) * n;
    let mut aug = Matrix::zeros(dim, dim);
    aug.set_block(0, 0, m);
    let eye = Matrix::identity(n);
    for blk in 0..k {
        aug.set_block(blk * n, (blk + 1) * n, &eye);
    }
    let e = expm(&aug)?;
    Ok(e.block(0, k * n, n, n))
}

/// Trigonometric-type block functions `ϕ_0(V) = cos(√V)` and
/// `ϕ_1(V) = sinc(√V)` in their matrix form `Σ (−1)^l V^l / (2l+i)!`.
///
/// Valid for any square `V` (indefinite included). Large arguments are
/// scaled by powers of 4 and recovered through the duplication identities
/// `ϕ_0(4V) = 2ϕ_0(V)² − I` and `ϕ_1(4V) = ϕ_0(V)ϕ_1(V)`.
pub fn phi_trig(i: usize, v: &Matrix) -> Result<Matrix, MatError> {
    if i > 1 {
        return Err(MatError::UnsupportedOrder { requested: i, max: 1 });
    }
    if !v.is_square() {
        return Err(MatError::NotSquare {
            rows: v.rows,
            cols: v.cols,
        });
    }
    if !v.is_finite() {
        return Err(MatError::NonFinite);
    }
    let norm = v.inf_norm();
    let mut scalings = 0u32;
    while norm / 4f64.powi(scalings as i32) > 1.0 {
        scalings += 1;
        if scalings > 200 {
            return Err(MatError::NormTooLarge { norm });
        }
    }
    let w = v.scale(4f64.powi(-(scalings as i32)));
    let (mut p0, mut p1) = phi_trig_pair_series(&w);
    let eye = Matrix::identity(v.rows);
    for _ in 0..scalings {
        let p1_next = &p0 * &p1;
        let p0_next = &(&p0 * &p0).scale(2.0) - &eye;
        p0 = p0_next;
        p1 = p1_next;
    }
    Ok(if i == 0 { p0 } else { p1 })
}

/// Alternating series for (ϕ_0, ϕ_1) at `‖W‖ ≤ 1`; shared powers, terms
/// decay factorially so ~12 terms reach machine precision.
fn phi_trig_pair_series(w: &Matrix) -> (Matrix, Matrix) {
    let n = w.rows();
    let mut p0 = Matrix::identity(n);
    let mut p1 = Matrix::identity(n);
    let mut power = Matrix::identity(n);
    let mut sign = 1.0;
    let mut fact = 1.0; // (2l)! running value
    for l in 1..=24usize {
        power = &power * w;
        sign = -sign;
        let two_l = 2 * l;
        fact *= ((two_l - 1) * two_l) as f64;
        let c0 = sign / fact;
        let c1 = sign / (fact * (two_l + 1) as f64);
        p0 = &p0 + &power.scale(c0);
        p1 = &p1 + &power.scale(c1);
        if power.max_abs() * c0.abs() <= f64::EPSILON * p0.max_abs() {
            break;
        }
    }
    (p0, p1)
}

/// Tolerance scale for the commutation precondition of
/// `second_order_exp_blocks`.
const COMMUTATION_TOL: f64 = 1e-12;

/// The four n×n blocks of `e^{hK}` for `K = [[0, I], [−Omega, N]]`, the
/// linear part of `q'' − N q' + Omega q = forcing`.
///
/// Requires `N` and `Omega` to commute (scaled residual ≤ 1e−12); the
/// blocks themselves are obtained by exponentiating the flat 2n×2n matrix,
/// which is well defined even near confluent eigenvalues, so no closed-form
/// square roots are ever formed.
pub fn second_order_exp_blocks(
    h: f64,
    n_mat: &Matrix,
    omega: &Matrix,
) -> Result<(Matrix, Matrix, Matrix, Matrix), MatError> {
    if !n_mat.is_square() {
        return Err(MatError::NotSquare {
            rows: n_mat.rows,
            cols: n_mat.cols,
        });
    }
    if n_mat.rows != omega.rows || !omega.is_square() {
        return Err(MatError::ShapeMismatch {
            left: (n_mat.rows, n_mat.cols),
            right: (omega.rows, omega.cols),
        });
    }
    let commutator = &(n_mat * omega) - &(omega * n_mat);
    let scale = 1.0 + n_mat.frobenius_norm() * omega.frobenius_norm();
    let residual = commutator.frobenius_norm() / scale;
    if residual > COMMUTATION_TOL {
        return Err(MatError::NonCommuting { residual });
    }
    let n = n_mat.rows;
    let flat = assemble_second_order_matrix(n_mat, omega);
    let e = expm(&flat.scale(h))?;
    Ok((
        e.block(0, 0, n, n),
        e.block(0, n, n, n),
        e.block(n, 0, n, n),
        e.block(n, n, n, n),
    ))
}

/// The flat 2n×2n matrix `[[0, I], [−Omega, N]]`.
pub(crate) fn assemble_second_order_matrix(n_mat: &Matrix, omega: &Matrix) -> Matrix {
    let n = n_mat.rows();
    let mut k = Matrix::zeros(2 * n, 2 * n);
    k.set_block(0, n, &Matrix::identity(n));
    k.set_block(n, 0, &omega.scale(-1.0));
    k.set_block(n, n, n_mat);
    k
}

/// Square grid of equally sized square blocks; the shape the stage-Jacobian
/// systems `I_s⊗I − h Ā F` naturally come in.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    block_rows: usize,
    block_cols: usize,
    block_dim: usize,
    blocks: Vec<Matrix>,
}

impl BlockMatrix {
    /// All-zero grid.
    pub fn zeros(block_rows: usize, block_cols: usize, block_dim: usize) -> Self {
        assert!(block_rows >= 1 && block_cols >= 1 && block_dim >= 1);
        BlockMatrix {
            block_rows,
            block_cols,
            block_dim,
            blocks: vec![Matrix::zeros(block_dim, block_dim); block_rows * block_cols],
        }
    }

    /// Block-diagonal identity.
    pub fn identity(block_rows: usize, block_dim: usize) -> Self {
        let mut m = BlockMatrix::zeros(block_rows, block_rows, block_dim);
        for i in 0..block_rows {
            *m.block_mut(i, i) = Matrix::identity(block_dim);
        }
        m
    }

    /// Build from a rectangular grid of equally sized square blocks.
    pub fn from_blocks(grid: Vec<Vec<Matrix>>) -> Self {
        assert!(!grid.is_empty() && !grid[0].is_empty(), "empty block grid");
        let block_rows = grid.len();
        let block_cols = grid[0].len();
        let block_dim = grid[0][0].rows();
        let mut blocks = Vec::with_capacity(block_rows * block_cols);
        for row in grid {
            assert_eq!(row.len(), block_cols, "ragged block grid");
            for b in row {
                assert!(
                    b.rows() == block_dim && b.cols() == block_dim,
                    "blocks must be square and uniformly sized"
                );
                blocks.push(b);
            }
        }
        BlockMatrix {
            block_rows,
            block_cols,
            block_dim,
            blocks,
        }
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    pub fn block_cols(&self) -> usize {
        self.block_cols
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn block(&self, i: usize, j: usize) -> &Matrix {
        &self.blocks[i * self.block_cols + j]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut Matrix {
        &mut self.blocks[i * self.block_cols + j]
    }

    /// Flatten to the underlying dense matrix.
    pub fn flatten(&self) -> Matrix {
        let d = self.block_dim;
        let mut out = Matrix::zeros(self.block_rows * d, self.block_cols * d);
        for i in 0..self.block_rows {
            for j in 0..self.block_cols {
                out.set_block(i * d, j * d, self.block(i, j));
            }
        }
        out
    }
}

/// Solve the block system `S X = rhs` where `rhs` stacks the right-hand
/// sides block-row-wise (`block_rows·block_dim` rows, any number of
/// columns).
pub fn solve_block(s: &BlockMatrix, rhs: &Matrix) -> Result<Matrix, MatError> {
    if s.block_rows != s.block_cols {
        return Err(MatError::NotSquare {
            rows: s.block_rows * s.block_dim,
            cols: s.block_cols * s.block_dim,
        });
    }
    let flat = s.flatten();
    if rhs.rows() != flat.rows() {
        return Err(MatError::ShapeMismatch {
            left: (flat.rows(), flat.cols()),
            right: (rhs.rows(), rhs.cols()),
        });
    }
    solve(&flat, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation_generator(t: f64) -> Matrix {
        Matrix::from_rows(&[vec![0.0, t], vec![-t, 0.0]])
    }

    /// Plain Taylor sum, valid for small norms; independent oracle for expm.
    fn expm_taylor_oracle(m: &Matrix) -> Matrix {
        assert!(m.inf_norm() < 2.0, "oracle only for small norms");
        let n = m.rows();
        let mut sum = Matrix::identity(n);
        let mut term = Matrix::identity(n);
        for k in 1..60 {
            term = (&term * m).scale(1.0 / k as f64);
            sum = &sum + &term;
            if term.max_abs() < 1e-20 {
                break;
            }
        }
        sum
    }

    /// Composite-Simpson quadrature of the integral definition of φ_k for
    /// scalar arguments: ∫₀¹ e^{(1−σ)z} σ^{k−1}/(k−1)! dσ.
    fn phi_scalar_quadrature(k: usize, z: f64) -> f64 {
        assert!(k >= 1);
        let factorial: f64 = (1..k).map(|i| i as f64).product();
        let integrand = |sigma: f64| ((1.0 - sigma) * z).exp() * sigma.powi(k as i32 - 1) / factorial;
        let panels = 4000;
        let h = 1.0 / panels as f64;
        let mut acc = integrand(0.0) + integrand(1.0);
        for i in 1..panels {
            let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += weight * integrand(i as f64 * h);
        }
        acc * h / 3.0
    }

    fn det_cofactor_oracle(m: &Matrix) -> f64 {
        let n = m.rows();
        if n == 1 {
            return m[(0, 0)];
        }
        let mut acc = 0.0;
        let mut sign = 1.0;
        for j in 0..n {
            let minor = Matrix::from_fn(n - 1, n - 1, |r, c| {
                m[(r + 1, if c < j { c } else { c + 1 })]
            });
            acc += sign * m[(0, j)] * det_cofactor_oracle(&minor);
            sign = -sign;
        }
        acc
    }

    /// Deterministic pseudo-random entries for oracle comparisons.
    fn lcg_matrix(n: usize, seed: u64) -> Matrix {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        Matrix::from_fn(n, n, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn expm_of_zero_is_exact_identity() {
        let e = expm(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(e, Matrix::identity(3));
    }

    #[test]
    fn expm_diagonal_case() {
        let e = expm(&Matrix::diag(&[1.0, -1.0])).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 4e-15);
        assert!((e[(1, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn expm_rotation_matches_taylor_oracle_and_closed_form() {
        let t = 0.7;
        let e = expm(&rotation_generator(t)).unwrap();
        let oracle = expm_taylor_oracle(&rotation_generator(t));
        assert!(e.max_abs_diff(&oracle) < 1e-15);
        let closed = Matrix::from_rows(&[
            vec![t.cos(), t.sin()],
            vec![-t.sin(), t.cos()],
        ]);
        assert!(e.max_abs_diff(&closed) < 1e-15);
    }

    #[test]
    fn expm_large_norm_still_accurate_after_squaring() {
        // 40 radians of rotation: forces 8 squarings, entries stay bounded.
        let t = 40.0;
        let e = expm(&rotation_generator(t)).unwrap();
        let closed = Matrix::from_rows(&[
            vec![t.cos(), t.sin()],
            vec![-t.sin(), t.cos()],
        ]);
        assert!(e.max_abs_diff(&closed) < 1e-12);
    }

    #[test]
    fn expm_rejects_non_square_and_overflow() {
        assert!(matches!(
            expm(&Matrix::zeros(2, 3)),
            Err(MatError::NotSquare { .. })
        ));
        assert!(matches!(
            expm(&Matrix::diag(&[1e300])),
            Err(MatError::NormTooLarge { .. })
        ));
        // e^1000 overflows f64 even though the scaling budget suffices.
        assert!(matches!(
            expm(&Matrix::diag(&[1000.0])),
            Err(MatError::NormTooLarge { .. })
        ));
    }

    #[test]
    fn phi_at_zero_is_inverse_factorial() {
        for k in 0..=4usize {
            let p = phi(k, &Matrix::zeros(2, 2)).unwrap();
            let factorial: f64 = (1..=k).map(|i| i as f64).product();
            assert!(
                p.max_abs_diff(&Matrix::identity(2).scale(1.0 / factorial)) < 1e-15,
                "phi_{k}(0)"
            );
        }
    }

    #[test]
    fn phi_one_scalar_matches_closed_form_and_quadrature() {
        let z = 0.3;
        let p = phi(1, &Matrix::diag(&[z])).unwrap()[(0, 0)];
        assert!((p - (z.exp() - 1.0) / z).abs() < 1e-15);
        assert!((p - phi_scalar_quadrature(1, z)).abs() < 1e-13);
    }

    #[test]
    fn phi_two_scalar_matches_recurrence_and_quadrature() {
        let z = 0.3;
        let p = phi(2, &Matrix::diag(&[z])).unwrap()[(0, 0)];
        assert!((p - (z.exp() - 1.0 - z) / (z * z)).abs() < 5e-15);
        assert!((p - phi_scalar_quadrature(2, z)).abs() < 1e-13);
    }

    #[test]
    fn phi_matrix_recurrence_holds() {
        let m = rotation_generator(0.9);
        for k in 0..4usize {
            let factorial: f64 = (1..=k).map(|i| i as f64).product();
            let lhs = &m * &phi(k + 1, &m).unwrap();
            let rhs = &phi(k, &m).unwrap() - &Matrix::identity(2).scale(1.0 / factorial);
            assert!(lhs.max_abs_diff(&rhs) < 1e-14, "recurrence at k={k}");
        }
    }

    #[test]
    fn phi_trig_at_zero_is_exact_identity() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(phi_trig(0, &z).unwrap(), Matrix::identity(2));
        assert_eq!(phi_trig(1, &z).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn phi_trig_scalar_values() {
        let v = Matrix::diag(&[2.25]);
        let x = 1.5f64; // √2.25
        assert!((phi_trig(0, &v).unwrap()[(0, 0)] - x.cos()).abs() < 1e-15);
        assert!((phi_trig(1, &v).unwrap()[(0, 0)] - x.sin() / x).abs() < 1e-15);
    }

    #[test]
    fn phi_trig_negative_argument_gives_hyperbolic_values() {
        // V = −v: cos(√V) continues to cosh(√v).
        let v = 4.0f64;
        let p0 = phi_trig(0, &Matrix::diag(&[-v])).unwrap()[(0, 0)];
        assert!((p0 - v.sqrt().cosh()).abs() < 1e-13);
    }

    #[test]
    fn phi_trig_large_argument_uses_duplication() {
        let x = 37.0f64;
        let v = Matrix::diag(&[x * x]);
        assert!((phi_trig(0, &v).unwrap()[(0, 0)] - x.cos()).abs() < 1e-12);
        assert!((phi_trig(1, &v).unwrap()[(0, 0)] - x.sin() / x).abs() < 1e-12);
    }

    #[test]
    fn phi_trig_rejects_higher_orders() {
        assert!(matches!(
            phi_trig(2, &Matrix::identity(2)),
            Err(MatError::UnsupportedOrder { requested: 2, max: 1 })
        ));
    }

    #[test]
    fn second_order_blocks_with_zero_stiffness_reduce_to_phi_forms() {
        let h = 0.1;
        let n_mat = Matrix::from_rows(&[vec![0.0, 10.0], vec![-10.0, 0.0]]);
        let omega = Matrix::zeros(2, 2);
        let (e11, e12, e21, e22) = second_order_exp_blocks(h, &n_mat, &omega).unwrap();
        assert!(e11.max_abs_diff(&Matrix::identity(2)) < 1e-14);
        assert!(e21.max_abs() < 1e-14);
        let hn = n_mat.scale(h);
        assert!(e12.max_abs_diff(&phi(1, &hn).unwrap().scale(h)) < 1e-13);
        assert!(e22.max_abs_diff(&expm(&hn).unwrap()) < 1e-14);
    }

    #[test]
    fn second_order_blocks_harmonic_oscillator() {
        let (h, w) = (0.1, 2.0);
        let omega = Matrix::identity(2).scale(w * w);
        let (e11, e12, e21, e22) =
            second_order_exp_blocks(h, &Matrix::zeros(2, 2), &omega).unwrap();
        let hw = h * w;
        assert!(e11.max_abs_diff(&Matrix::identity(2).scale(hw.cos())) < 1e-14);
        assert!(e12.max_abs_diff(&Matrix::identity(2).scale(hw.sin() / w)) < 1e-14);
        assert!(e21.max_abs_diff(&Matrix::identity(2).scale(-w * hw.sin())) < 1e-13);
        assert!(e22.max_abs_diff(&Matrix::identity(2).scale(hw.cos())) < 1e-14);
    }

    #[test]
    fn second_order_blocks_at_h_zero_are_exact() {
        let n_mat = Matrix::diag(&[0.3]);
        let omega = Matrix::diag(&[0.02]);
        let (e11, e12, e21, e22) = second_order_exp_blocks(0.0, &n_mat, &omega).unwrap();
        assert_eq!(e11, Matrix::identity(1));
        assert_eq!(e12, Matrix::zeros(1, 1));
        assert_eq!(e21, Matrix::zeros(1, 1));
        assert_eq!(e22, Matrix::identity(1));
    }

    #[test]
    fn second_order_blocks_scalar_eigen_oracle() {
        // Scalar case with distinct real eigenvalues: e^{hK} by Lagrange
        // interpolation on the spectrum of [[0,1],[−Ω,N]].
        let (h, nn, om): (f64, f64, f64) = (0.4, 0.3, 0.02);
        let disc = (nn * nn - 4.0 * om).sqrt();
        let (lp, lm) = ((nn + disc) / 2.0, (nn - disc) / 2.0);
        let k = Matrix::from_rows(&[vec![0.0, 1.0], vec![-om, nn]]);
        let eye = Matrix::identity(2);
        let oracle = &(&k - &eye.scale(lm)).scale((h * lp).exp() / (lp - lm))
            - &(&k - &eye.scale(lp)).scale((h * lm).exp() / (lp - lm));
        let (e11, e12, e21, e22) =
            second_order_exp_blocks(h, &Matrix::diag(&[nn]), &Matrix::diag(&[om])).unwrap();
        assert!((e11[(0, 0)] - oracle[(0, 0)]).abs() < 1e-13);
        assert!((e12[(0, 0)] - oracle[(0, 1)]).abs() < 1e-13);
        assert!((e21[(0, 0)] - oracle[(1, 0)]).abs() < 1e-13);
        assert!((e22[(0, 0)] - oracle[(1, 1)]).abs() < 1e-13);
    }

    #[test]
    fn second_order_blocks_reject_non_commuting_coefficients() {
        let n_mat = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let omega = Matrix::diag(&[1.0, 2.0]);
        assert!(matches!(
            second_order_exp_blocks(0.1, &n_mat, &omega),
            Err(MatError::NonCommuting { .. })
        ));
    }

    #[test]
    fn det_trivial_cases() {
        assert_eq!(Matrix::identity(4).det(), 1.0);
        assert_eq!(Matrix::diag(&[2.0, 3.0, 4.0]).det(), 24.0);
        // Row swap of the identity: determinant −1 with exact sign.
        let mut p = Matrix::identity(3);
        p[(0, 0)] = 0.0;
        p[(1, 1)] = 0.0;
        p[(0, 1)] = 1.0;
        p[(1, 0)] = 1.0;
        assert_eq!(p.det(), -1.0);
    }

    #[test]
    fn det_singular_is_exactly_zero() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(m.det(), 0.0);
    }

    #[test]
    fn det_matches_cofactor_oracle() {
        for seed in 1..=8u64 {
            let m = lcg_matrix(5, seed);
            let reference = det_cofactor_oracle(&m);
            let got = m.det();
            assert!(
                (got - reference).abs() <= 1e-12 * reference.abs().max(1.0),
                "seed {seed}: {got} vs {reference}"
            );
        }
    }

    #[test]
    fn solve_accepts_multiple_right_hand_sides() {
        let a = lcg_matrix(6, 3);
        let b = Matrix::from_fn(6, 2, |i, j| (i + 2 * j) as f64);
        let x = solve(&a, &b).unwrap();
        let residual = (&(&a * &x) - &b).max_abs();
        assert!(residual < 1e-12 * b.max_abs().max(1.0));
    }

    #[test]
    fn solve_reports_singularity_with_pivot_index() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        match solve(&a, &Matrix::identity(2)) {
            Err(MatError::Singular { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn inverse_round_trip() {
        let a = lcg_matrix(4, 9);
        let inv = a.inverse().unwrap();
        assert!((&a * &inv).max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    #[test]
    fn solve_block_identity_and_diagonal_blocks() {
        let s = BlockMatrix::identity(2, 2);
        let rhs = Matrix::from_fn(4, 1, |i, _| i as f64 + 1.0);
        assert_eq!(solve_block(&s, &rhs).unwrap(), rhs);

        let mut d = BlockMatrix::zeros(2, 2, 1);
        *d.block_mut(0, 0) = Matrix::diag(&[2.0]);
        *d.block_mut(1, 1) = Matrix::diag(&[4.0]);
        let ones = Matrix::from_fn(2, 1, |_, _| 1.0);
        let x = solve_block(&d, &ones).unwrap();
        assert_eq!(x[(0, 0)], 0.5);
        assert_eq!(x[(1, 0)], 0.25);
    }

    #[test]
    fn solve_block_matches_flat_oracle() {
        let mut s = BlockMatrix::zeros(3, 3, 2);
        for i in 0..3 {
            for j in 0..3 {
                let base = lcg_matrix(2, (10 * i + j + 1) as u64).scale(0.3);
                *s.block_mut(i, j) = if i == j {
                    &base + &Matrix::identity(2)
                } else {
                    base
                };
            }
        }
        let rhs = Matrix::from_fn(6, 2, |i, j| ((i * 2 + j) as f64).sin());
        let x = solve_block(&s, &rhs).unwrap();
        let flat_x = solve(&s.flatten(), &rhs).unwrap();
        assert!(x.max_abs_diff(&flat_x) == 0.0);
        assert!((&(&s.flatten() * &x) - &rhs).max_abs() < 1e-13);
    }

    #[test]
    fn block_matrix_flatten_round_trip() {
        let mut s = BlockMatrix::zeros(2, 3, 2);
        for i in 0..2 {
            for j in 0..3 {
                *s.block_mut(i, j) = lcg_matrix(2, (i * 3 + j) as u64 + 1);
            }
        }
        let flat = s.flatten();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(flat.block(2 * i, 2 * j, 2, 2), *s.block(i, j));
            }
        }
    }
}
