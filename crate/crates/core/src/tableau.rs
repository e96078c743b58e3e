//! Butcher tableaux and the structure checks the exponential methods rely
//! on: symplecticity of the underlying RK scheme, nonzero weights, equal
//! nodes, order conditions up to order four, and the construction of the
//! exponential coefficients `ā_ij(hK) = a_ij e^{(c_i−c_j)hK}`,
//! `b̄_i(hK) = b_i e^{(1−c_i)hK}`.
//!
//! Tableaux can also be read from a plain-text file (see
//! [`ButcherTableau::from_str_format`]) whose entries may be exact
//! expressions such as `1/4` or `1/4-sqrt(3)/6`, so structural residuals
//! are not contaminated by decimal truncation.

use std::fmt;
use std::path::Path;

use crate::matfun::{expm, MatError, Matrix};

/// Errors from tableau construction, validation and parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum TableauError {
    /// Requested a Gauss–Legendre stage count outside {1, 2}.
    UnsupportedStages { requested: usize },
    /// Order conditions are implemented for p ≤ 4 only.
    UnsupportedOrder { requested: usize, max: usize },
    /// Malformed tableau text; line numbers are 1-based.
    Parse { line: usize, message: String },
    /// File could not be read.
    Io { path: String, message: String },
}

impl fmt::Display for TableauError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableauError::UnsupportedStages { requested } => {
                write!(f, "no Gauss-Legendre tableau with {requested} stages (supported: 1, 2)")
            }
            TableauError::UnsupportedOrder { requested, max } => {
                write!(f, "order conditions implemented up to {max}, got {requested}")
            }
            TableauError::Parse { line, message } => {
                write!(f, "tableau parse error on line {line}: {message}")
            }
            TableauError::Io { path, message } => write!(f, "cannot read {path}: {message}"),
        }
    }
}

impl std::error::Error for TableauError {}

/// Scale factor of the symplecticity tolerance; residuals of exactly
/// entered tableaux are rounding-level.
const SYMPLECTIC_TOL: f64 = 1e-14;
/// Tolerance on the order-condition residuals.
const ORDER_TOL: f64 = 1e-13;

/// Coefficients (c, b, A) of an s-stage Runge–Kutta method.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    c: Vec<f64>,
    b: Vec<f64>,
    a: Matrix,
}

impl ButcherTableau {
    /// Build from nodes, weights and the stage matrix; panics on
    /// inconsistent sizes or non-finite entries.
    pub fn new(c: Vec<f64>, b: Vec<f64>, a: Matrix) -> Self {
        let s = c.len();
        assert!(s >= 1, "tableau needs at least one stage");
        assert_eq!(b.len(), s, "weight count must match stage count");
        assert!(a.rows() == s && a.cols() == s, "stage matrix must be s x s");
        assert!(
            c.iter().chain(b.iter()).all(|x| x.is_finite()) && a.is_finite(),
            "tableau entries must be finite"
        );
        ButcherTableau { c, b, a }
    }

    pub fn stages(&self) -> usize {
        self.c.len()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    /// Frobenius norm of `diag(b)·A + Aᵀ·diag(b) − b·bᵀ`.
    pub fn symplecticity_residual(&self) -> f64 {
        let s = self.stages();
        let mut acc = 0.0;
        for i in 0..s {
            for j in 0..s {
                let r = self.b[i] * self.a[(i, j)] + self.b[j] * self.a[(j, i)]
                    - self.b[i] * self.b[j];
                acc += r * r;
            }
        }
        acc.sqrt()
    }

    /// True when the symplecticity residual is rounding-level relative to
    /// the weight magnitude.
    pub fn is_symplectic(&self) -> bool {
        let b_norm_sq: f64 = self.b.iter().map(|x| x * x).sum();
        self.symplecticity_residual() <= SYMPLECTIC_TOL * (1.0 + b_norm_sq)
    }

    /// True when every weight is nonzero.
    pub fn weights_nonzero(&self) -> bool {
        self.b.iter().all(|&w| w != 0.0)
    }

    /// True when all nodes coincide exactly.
    pub fn has_equal_nodes(&self) -> bool {
        self.c.iter().all(|&ci| ci == self.c[0])
    }

    /// The gate an exponential method must pass before any volume guarantee
    /// is claimed: symplectic underlying tableau and all weights nonzero.
    pub fn satisfies_vp_gate(&self) -> bool {
        self.is_symplectic() && self.weights_nonzero()
    }

    /// Check all rooted-tree order conditions up to order `p` (p ≤ 4).
    pub fn order_check(&self, p: usize) -> Result<bool, TableauError> {
        if p == 0 || p > 4 {
            return Err(TableauError::UnsupportedOrder { requested: p, max: 4 });
        }
        let s = self.stages();
        let b = &self.b;
        let c = &self.c;
        let a = &self.a;
        // Stage-level sums A·c and A·c².
        let ac: Vec<f64> = (0..s)
            .map(|i| (0..s).map(|j| a[(i, j)] * c[j]).sum())
            .collect();
        let ac2: Vec<f64> = (0..s)
            .map(|i| (0..s).map(|j| a[(i, j)] * c[j] * c[j]).sum())
            .collect();
        let aac: Vec<f64> = (0..s)
            .map(|i| (0..s).map(|j| a[(i, j)] * ac[j]).sum())
            .collect();
        let dot = |w: &dyn Fn(usize) -> f64| -> f64 { (0..s).map(|i| b[i] * w(i)).sum() };

        let mut residuals: Vec<f64> = Vec::new();
        // Order 1: Σ b_i = 1.
        residuals.push(dot(&|_| 1.0) - 1.0);
        if p >= 2 {
            residuals.push(dot(&|i| c[i]) - 0.5);
        }
        if p >= 3 {
            residuals.push(dot(&|i| c[i] * c[i]) - 1.0 / 3.0);
            residuals.push(dot(&|i| ac[i]) - 1.0 / 6.0);
        }
        if p >= 4 {
            residuals.push(dot(&|i| c[i] * c[i] * c[i]) - 0.25);
            residuals.push(dot(&|i| c[i] * ac[i]) - 0.125);
            residuals.push(dot(&|i| ac2[i]) - 1.0 / 12.0);
            residuals.push(dot(&|i| aac[i]) - 1.0 / 24.0);
        }
        Ok(residuals.iter().all(|r| r.abs() <= ORDER_TOL))
    }

    /// Parse the plain-text tableau format.
    ///
    /// Line 1: the stage count `s`. Lines 2..s+1: `c_i | a_i1 … a_is`.
    /// Final line: `b_1 … b_s`. Blank lines and lines starting with `#` are
    /// ignored. Entry tokens are whitespace-separated and may be exact
    /// expressions (`0.25`, `1/4`, `sqrt(3)/6`, `1/4-sqrt(3)/6`) with no
    /// internal spaces.
    pub fn from_str_format(text: &str) -> Result<Self, TableauError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if lines.is_empty() {
            return Err(TableauError::Parse {
                line: 1,
                message: "empty tableau".into(),
            });
        }
        let (first_no, first) = lines[0];
        let s: usize = first.parse().map_err(|_| TableauError::Parse {
            line: first_no,
            message: format!("expected stage count, found {first:?}"),
        })?;
        if s == 0 {
            return Err(TableauError::Parse {
                line: first_no,
                message: "stage count must be at least 1".into(),
            });
        }
        if lines.len() != s + 2 {
            return Err(TableauError::Parse {
                line: first_no,
                message: format!(
                    "expected {} content lines for {s} stages, found {}",
                    s + 2,
                    lines.len()
                ),
            });
        }
        let mut c = Vec::with_capacity(s);
        let mut a = Matrix::zeros(s, s);
        for i in 0..s {
            let (line_no, line) = lines[1 + i];
            let (c_part, a_part) = line.split_once('|').ok_or_else(|| TableauError::Parse {
                line: line_no,
                message: "stage line must be 'c | a_1 ... a_s'".into(),
            })?;
            c.push(parse_entry(c_part.trim(), line_no)?);
            let row = parse_entry_list(a_part, line_no)?;
            if row.len() != s {
                return Err(TableauError::Parse {
                    line: line_no,
                    message: format!("expected {s} stage coefficients, found {}", row.len()),
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        let (b_no, b_line) = lines[s + 1];
        let b = parse_entry_list(b_line, b_no)?;
        if b.len() != s {
            return Err(TableauError::Parse {
                line: b_no,
                message: format!("expected {s} weights, found {}", b.len()),
            });
        }
        Ok(ButcherTableau::new(c, b, a))
    }

    /// Read the plain-text format from a file.
    pub fn from_file(path: &Path) -> Result<Self, TableauError> {
        let text = std::fs::read_to_string(path).map_err(|e| TableauError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str_format(&text)
    }
}

/// The Gauss–Legendre collocation tableau with `s` stages (1 or 2):
/// midpoint, and the classical order-four pair of nodes `1/2 ∓ √3/6`.
pub fn gauss_legendre(s: usize) -> Result<ButcherTableau, TableauError> {
    match s {
        1 => Ok(ButcherTableau::new(
            vec![0.5],
            vec![1.0],
            Matrix::from_rows(&[vec![0.5]]),
        )),
        2 => {
            let r = 3f64.sqrt() / 6.0;
            Ok(ButcherTableau::new(
                vec![0.5 - r, 0.5 + r],
                vec![0.5, 0.5],
                Matrix::from_rows(&[vec![0.25, 0.25 - r], vec![0.25 + r, 0.25]]),
            ))
        }
        other => Err(TableauError::UnsupportedStages { requested: other }),
    }
}

/// The two-stage symplectic tableau with coinciding nodes
/// (c = (1/2, 1/2), b = (1/2, 1/2), all stage coefficients 1/4): the test
/// vehicle for the equal-node volume-preservation guarantees.
pub fn equal_node_two_stage() -> ButcherTableau {
    ButcherTableau::new(
        vec![0.5, 0.5],
        vec![0.5, 0.5],
        Matrix::from_rows(&[vec![0.25, 0.25], vec![0.25, 0.25]]),
    )
}

/// Exponential coefficients of a tableau for a specific step and linear
/// part: `ā_ij = a_ij e^{(c_i−c_j)hK}`, `b̄_i = b_i e^{(1−c_i)hK}`, plus the
/// node propagators `e^{c_i hK}` and the step propagator `e^{hK}`.
#[derive(Debug, Clone)]
pub struct ExpCoefficients {
    pub abar: Vec<Vec<Matrix>>,
    pub bbar: Vec<Matrix>,
    pub node_exponentials: Vec<Matrix>,
    pub step_exponential: Matrix,
}

impl ExpCoefficients {
    pub fn stages(&self) -> usize {
        self.bbar.len()
    }

    pub fn dim(&self) -> usize {
        self.step_exponential.rows()
    }
}

/// Build the exponential coefficients of `t` for step `h` and linear part
/// `k`. At `k = 0` every block reduces exactly to a scalar multiple of the
/// identity, recovering the plain RK scheme.
pub fn build_exp_coefficients(
    t: &ButcherTableau,
    h: f64,
    k: &Matrix,
) -> Result<ExpCoefficients, MatError> {
    if !k.is_square() {
        return Err(MatError::NotSquare {
            rows: k.rows(),
            cols: k.cols(),
        });
    }
    let s = t.stages();
    let c = t.c();
    let mut abar = Vec::with_capacity(s);
    for i in 0..s {
        let mut row = Vec::with_capacity(s);
        for j in 0..s {
            row.push(expm(&k.scale((c[i] - c[j]) * h))?.scale(t.a()[(i, j)]));
        }
        abar.push(row);
    }
    let mut bbar = Vec::with_capacity(s);
    let mut node_exponentials = Vec::with_capacity(s);
    for i in 0..s {
        bbar.push(expm(&k.scale((1.0 - c[i]) * h))?.scale(t.b()[i]));
        node_exponentials.push(expm(&k.scale(c[i] * h))?);
    }
    let step_exponential = expm(&k.scale(h))?;
    Ok(ExpCoefficients {
        abar,
        bbar,
        node_exponentials,
        step_exponential,
    })
}

/// Evaluate one whitespace-free exact-entry expression.
fn parse_entry(token: &str, line: usize) -> Result<f64, TableauError> {
    ExprParser::new(token)
        .parse()
        .map_err(|message| TableauError::Parse { line, message })
}

/// Split a line into whitespace-separated entries and evaluate each.
fn parse_entry_list(text: &str, line: usize) -> Result<Vec<f64>, TableauError> {
    text.split_whitespace()
        .map(|tok| parse_entry(tok, line))
        .collect()
}

/// Recursive-descent evaluator for exact tableau entries.
///
/// Grammar: expr = term {('+'|'-') term}; term = factor {('*'|'/') factor};
/// factor = '-' factor | number | 'sqrt' '(' expr ')' | '(' expr ')'.
struct ExprParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ExprParser<'a> {
    fn new(text: &'a str) -> Self {
        ExprParser {
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn parse(mut self) -> Result<f64, String> {
        let value = self.expr()?;
        if self.pos != self.bytes.len() {
            return Err(format!(
                "unexpected trailing input at byte {} in entry",
                self.pos
            ));
        }
        if !value.is_finite() {
            return Err("entry evaluates to a non-finite value".into());
        }
        Ok(value)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<f64, String> {
        let mut acc = self.term()?;
        while let Some(op) = self.peek() {
            match op {
                b'+' => {
                    self.pos += 1;
                    acc += self.term()?;
                }
                b'-' => {
                    self.pos += 1;
                    acc -= self.term()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, String> {
        let mut acc = self.factor()?;
        while let Some(op) = self.peek() {
            match op {
                b'*' => {
                    self.pos += 1;
                    acc *= self.factor()?;
                }
                b'/' => {
                    self.pos += 1;
                    let denom = self.factor()?;
                    if denom == 0.0 {
                        return Err("division by zero".into());
                    }
                    acc /= denom;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<f64, String> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(b')')?;
                Ok(v)
            }
            Some(b's') => {
                let rest = &self.bytes[self.pos..];
                if rest.starts_with(b"sqrt(") {
                    self.pos += 5;
                    let v = self.expr()?;
                    self.expect(b')')?;
                    if v < 0.0 {
                        return Err("sqrt of a negative value".into());
                    }
                    Ok(v.sqrt())
                } else {
                    Err("unknown identifier (only sqrt is recognised)".into())
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) => Err(format!("unexpected character {:?}", c as char)),
            None => Err("unexpected end of entry".into()),
        }
    }

    fn number(&mut self) -> Result<f64, String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .bytes
                    .get(self.pos + 1)
                    .is_some_and(|&n| n.is_ascii_digit() || n == b'+' || n == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse()
            .map_err(|_| format!("invalid number {text:?}"))
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(format!("expected {:?}", c as char))
        }
    }
}
