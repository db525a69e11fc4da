//! Step-by-step comparison of two CSV traces.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::experiment::COLUMNS;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("unknown column `{0}` (known: step, loss_at_eval_point, lambda_norm, residual, wall_ms)")]
    UnknownColumn(String),
}

/// A trace read back from CSV; one row per step, columns as in [`COLUMNS`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<[f64; 5]>,
}

pub fn parse_trace(text: &str, origin: &str) -> Result<Trace, TraceError> {
    let err = |msg: String| TraceError::Read { path: origin.to_string(), msg };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| err(e.to_string()))?;
    if header.iter().ne(COLUMNS) {
        return Err(err(format!("expected header {}", COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let mut row = [0.0; 5];
        for (j, field) in rec.iter().enumerate() {
            row[j] = field.parse().map_err(|_| err(format!("row {}: `{field}` is not a number", i + 1)))?;
        }
        rows.push(row);
    }
    Ok(Trace { rows })
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TraceError::Read { path: path.display().to_string(), msg: e.to_string() })?;
    parse_trace(&text, &path.display().to_string())
}

pub fn column_index(name: &str) -> Result<usize, TraceError> {
    COLUMNS.iter().position(|c| *c == name).ok_or_else(|| TraceError::UnknownColumn(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDeviation {
    pub step: f64,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub columns: Vec<String>,
    pub tol: f64,
    pub per_step: Vec<StepDeviation>,
    pub max_abs_deviation: f64,
    pub rows: (usize, usize),
    pub passed: bool,
}

/// `|a - b|`, with two NaNs (or equal infinities) counting as equal.
fn deviation(a: f64, b: f64) -> f64 {
    if a == b || (a.is_nan() && b.is_nan()) {
        0.0
    } else {
        (a - b).abs().max(if a.is_nan() || b.is_nan() { f64::INFINITY } else { 0.0 })
    }
}

/// Per-step maximum absolute deviation over `columns`. Traces of different
/// length fail; the report is symmetric in `a` and `b`.
pub fn compare(a: &Trace, b: &Trace, columns: &[&str], tol: f64) -> Result<ComparisonReport, TraceError> {
    let idx = columns.iter().map(|c| column_index(c)).collect::<Result<Vec<_>, _>>()?;
    let per_step: Vec<StepDeviation> = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| StepDeviation {
            step: ra[0].min(rb[0]),
            max_abs_deviation: idx.iter().map(|&j| deviation(ra[j], rb[j])).fold(0.0, f64::max),
        })
        .collect();
    let max = per_step.iter().map(|s| s.max_abs_deviation).fold(0.0, f64::max);
    Ok(ComparisonReport {
        columns: columns.iter().map(|c| c.to_string()).collect(),
        tol,
        max_abs_deviation: max,
        rows: (a.rows.len(), b.rows.len()),
        passed: a.rows.len() == b.rows.len() && max <= tol,
        per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rows: &[[f64; 5]]) -> Trace {
        Trace { rows: rows.to_vec() }
    }

    #[test]
    fn identical_traces_pass_with_zero_deviation() {
        let t = trace(&[[1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 1.0, 3.0, f64::NAN, 9.0]]);
        let r = compare(&t, &t, &["loss_at_eval_point", "residual"], 0.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_abs_deviation, 0.0);
    }

    #[test]
    fn deviation_is_symmetric_and_ignores_unselected_columns() {
        let a = trace(&[[1.0, 2.0, 3.0, 4.0, 5.0]]);
        let b = trace(&[[1.0, 2.5, 3.0, 4.0, 50.0]]);
        let ab = compare(&a, &b, &["loss_at_eval_point"], 0.1).unwrap();
        let ba = compare(&b, &a, &["loss_at_eval_point"], 0.1).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.max_abs_deviation, 0.5);
        assert!(!ab.passed);
        assert!(compare(&a, &b, &["lambda_norm", "residual"], 0.0).unwrap().passed);
    }

    #[test]
    fn length_mismatch_fails() {
        let a = trace(&[[1.0, 2.0, 3.0, 4.0, 5.0]]);
        let b = trace(&[[1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 2.0, 3.0, 4.0, 5.0]]);
        assert!(!compare(&a, &b, &["residual"], 1.0).unwrap().passed);
    }

    #[test]
    fn nan_against_number_is_infinite() {
        let a = trace(&[[1.0, f64::NAN, 3.0, 4.0, 5.0]]);
        let b = trace(&[[1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert_eq!(compare(&a, &b, &["loss_at_eval_point"], 1e9).unwrap().max_abs_deviation, f64::INFINITY);
    }

    #[test]
    fn parses_written_traces_and_rejects_bad_headers() {
        let t = parse_trace("step,loss_at_eval_point,lambda_norm,residual,wall_ms\n1,0.5,NaN,inf,0.1\n", "x").unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0][2].is_nan() && t.rows[0][3].is_infinite());
        assert!(parse_trace("step,loss\n1,2\n", "x").is_err());
        assert!(matches!(compare(&t, &t, &["bogus"], 0.0), Err(TraceError::UnknownColumn(_))));
    }
}
