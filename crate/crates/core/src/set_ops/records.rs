//! Attention-weight records and their CSV form.
//!
//! The CSV has the header `step,head,template_row,element_index,weight`, one
//! row per weight, weights written in the shortest scientific form that
//! parses back to the same `f64`.

use std::io::{BufRead, Write};

use crate::tensor::{Tensor, TensorError};

pub const ATTENTION_CSV_HEADER: &str = "step,head,template_row,element_index,weight";

/// Softmax weights of one head at one cascade step: `k×n`, rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub step: usize,
    pub head: usize,
    pub set_size: usize,
    pub weights: Tensor,
}

impl AttentionRecord {
    pub fn new(step: usize, head: usize, weights: Tensor) -> Self {
        Self {
            step,
            head,
            set_size: weights.cols(),
            weights,
        }
    }

    /// Largest deviation of any row sum from one; `None` if any weight is negative.
    pub fn max_row_sum_error(&self) -> Option<f64> {
        if self.weights.data().iter().any(|&w| w < 0.0) {
            return None;
        }
        Some(
            (0..self.weights.rows())
                .map(|i| (self.weights.row(i).iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Shortest scientific notation that round-trips exactly.
pub fn format_weight(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_attention_csv<W: Write>(records: &[AttentionRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{ATTENTION_CSV_HEADER}")?;
    for r in records {
        for t in 0..r.weights.rows() {
            for (e, w) in r.weights.row(t).iter().enumerate() {
                writeln!(out, "{},{},{},{},{}", r.step, r.head, t, e, format_weight(*w))?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum RecordParseError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Reads records back from CSV. Lines starting with `#` are skipped. Every
/// (step, head) group must be a dense `k×n` grid.
pub fn read_attention_csv<R: BufRead>(input: R) -> Result<Vec<AttentionRecord>, RecordParseError> {
    let mut rows: Vec<(usize, usize, usize, usize, f64)> = vec![];
    let mut saw_header = false;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !saw_header {
            if line != ATTENTION_CSV_HEADER {
                return Err(RecordParseError::Format {
                    line: lineno,
                    msg: format!("expected header `{ATTENTION_CSV_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(RecordParseError::Format {
                line: lineno,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let bad = |msg: String| RecordParseError::Format { line: lineno, msg };
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s}: {e}")));
        let weight = fields[4]
            .parse::<f64>()
            .map_err(|e| bad(format!("{}: {e}", fields[4])))?;
        rows.push((
            int(fields[0])?,
            int(fields[1])?,
            int(fields[2])?,
            int(fields[3])?,
            weight,
        ));
    }

    let mut records: Vec<AttentionRecord> = vec![];
    let mut start = 0;
    while start < rows.len() {
        let (step, head) = (rows[start].0, rows[start].1);
        let end = rows[start..]
            .iter()
            .position(|r| (r.0, r.1) != (step, head))
            .map_or(rows.len(), |p| start + p);
        let group = &rows[start..end];
        let k = group.iter().map(|r| r.2).max().unwrap_or(0) + 1;
        let n = group.iter().map(|r| r.3).max().unwrap_or(0) + 1;
        if group.len() != k * n {
            return Err(RecordParseError::Format {
                line: 0,
                msg: format!("step {step} head {head}: {} rows for a {k}×{n} grid", group.len()),
            });
        }
        let mut data = vec![f64::NAN; k * n];
        for r in group {
            data[r.2 * n + r.3] = r.4;
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(RecordParseError::Format {
                line: 0,
                msg: format!("step {step} head {head}: duplicate or missing cells"),
            });
        }
        records.push(AttentionRecord::new(step, head, Tensor::matrix(k, n, data)?));
        start = end;
    }
    Ok(records)
}
