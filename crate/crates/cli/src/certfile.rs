//! Plain-text class-certificate files for `classify --cert`.
//!
//! Format (blank lines and `#` comments ignored):
//!
//! ```text
//! class F_inf            # one of H, S, F_inf, F_2
//! partition 2            # F classes only; 0 applies the relation to the whole state
//! p 0 1                  # rows of the similarity matrix P (trailing block for F classes)
//! p -1 0
//! inner_class H          # F classes with partition > 0: certificate of the leading block
//! inner_p 0 1
//! inner_p -1 0
//! ```

use std::path::Path;

use vpflow::vpcheck::FieldClass;
use vpflow::{ClassCertificate, Matrix};

use crate::CliError;

fn parse_class(token: &str, line: usize) -> Result<FieldClass, CliError> {
    match token {
        "H" => Ok(FieldClass::H),
        "S" => Ok(FieldClass::S),
        "F_inf" => Ok(FieldClass::FInf),
        "F_2" => Ok(FieldClass::F2),
        other => Err(CliError::Usage(format!(
            "certificate line {line}: unknown class '{other}' (expected H, S, F_inf, F_2)"
        ))),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, CliError> {
    if rows.is_empty() {
        return Err(CliError::Usage(format!("certificate: no '{what}' rows")));
    }
    let n = rows[0].len();
    if rows.len() != n {
        return Err(CliError::Usage(format!(
            "certificate: '{what}' must be square, found {} rows of width {n}",
            rows.len()
        )));
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Usage(format!(
            "certificate: ragged '{what}' rows"
        )));
    }
    Ok(Matrix::from_rows(rows))
}

/// Parse a certificate file and validate it against the problem dimension.
pub fn load(path: &Path, problem_dim: usize) -> Result<ClassCertificate, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("certificate file {}: {e}", path.display())))?;
    let mut class: Option<FieldClass> = None;
    let mut partition: Option<usize> = None;
    let mut p_rows: Vec<Vec<f64>> = Vec::new();
    let mut inner_class: Option<FieldClass> = None;
    let mut inner_rows: Vec<Vec<f64>> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line_no = no + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(char::is_whitespace).ok_or_else(|| {
            CliError::Usage(format!("certificate line {line_no}: expected 'key value…'"))
        })?;
        let rest = rest.trim();
        let numbers = |target: &mut Vec<Vec<f64>>| -> Result<(), CliError> {
            let row: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
            target.push(row.map_err(|e| {
                CliError::Usage(format!("certificate line {line_no}: bad number ({e})"))
            })?);
            Ok(())
        };
        match key {
            "class" => class = Some(parse_class(rest, line_no)?),
            "partition" => {
                partition = Some(rest.parse().map_err(|e| {
                    CliError::Usage(format!("certificate line {line_no}: bad partition ({e})"))
                })?)
            }
            "p" => numbers(&mut p_rows)?,
            "inner_class" => inner_class = Some(parse_class(rest, line_no)?),
            "inner_p" => numbers(&mut inner_rows)?,
            other => {
                return Err(CliError::Usage(format!(
                    "certificate line {line_no}: unknown key '{other}'"
                )))
            }
        }
    }
    let tag = class.ok_or_else(|| CliError::Usage("certificate: missing 'class' line".into()))?;
    let p = rows_to_matrix(&p_rows, "p")?;
    match tag {
        FieldClass::H | FieldClass::S => {
            if p.rows() != problem_dim {
                return Err(CliError::Usage(format!(
                    "certificate: P is {}×{} but the problem has dimension {problem_dim}",
                    p.rows(),
                    p.cols()
                )));
            }
            Ok(if tag == FieldClass::H {
                ClassCertificate::h_class(p)
            } else {
                ClassCertificate::s_class(p)
            })
        }
        FieldClass::FInf | FieldClass::F2 => {
            let m = partition.ok_or_else(|| {
                CliError::Usage("certificate: F classes need a 'partition' line".into())
            })?;
            if m > problem_dim {
                return Err(CliError::Usage(format!(
                    "certificate: partition {m} exceeds problem dimension {problem_dim}"
                )));
            }
            if p.rows() != problem_dim - m {
                return Err(CliError::Usage(format!(
                    "certificate: P is {}×{} but the trailing block has dimension {}",
                    p.rows(),
                    p.cols(),
                    problem_dim - m
                )));
            }
            let inner = if m == 0 {
                None
            } else {
                let itag = inner_class.ok_or_else(|| {
                    CliError::Usage("certificate: partition > 0 needs an 'inner_class'".into())
                })?;
                let ip = rows_to_matrix(&inner_rows, "inner_p")?;
                if ip.rows() != m {
                    return Err(CliError::Usage(format!(
                        "certificate: inner P is {}×{} but the leading block has dimension {m}",
                        ip.rows(),
                        ip.cols()
                    )));
                }
                let inner_cert = match itag {
                    FieldClass::H => ClassCertificate::h_class(ip),
                    FieldClass::S => ClassCertificate::s_class(ip),
                    other => {
                        return Err(CliError::Usage(format!(
                            "certificate: nested F certificates ({other}) are not supported in files"
                        )))
                    }
                };
                Some(Box::new(inner_cert))
            };
            Ok(ClassCertificate {
                tag,
                p,
                partition: Some(m),
                inner,
            })
        }
    }
}
