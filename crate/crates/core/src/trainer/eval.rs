//! Log-likelihood on freshly generated test sets translated by fixed shifts.

use std::io::Write;
use std::str::FromStr;

use crate::mog::{gmm_log_likelihood, sample_mog, shift_set, MogConfig};
use crate::seed::derive_seed;
use crate::tensor::{Tensor, TensorError};

use super::model::Model;

/// Shifts scored by default, in reporting order.
pub const DEFAULT_SHIFTS: [f64; 7] = [0.0, 8.0, -8.0, 10.0, -10.0, 12.0, -12.0];

pub const METRICS_CSV_HEADER: &str = "shift,avg_ll,num_sets,seed";

/// What assigns mixture parameters to a test set.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Model(&'a Model),
    /// Bypasses the network and scores each set under its own generative
    /// parameters, translated along with the set.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftRow {
    pub shift: f64,
    pub avg_ll: f64,
    pub num_sets: usize,
    pub seed: u64,
}

/// Parses a comma-separated shift list such as `0,8,-8`. Blank input gives
/// an empty list.
pub fn parse_shifts(s: &str) -> Result<Vec<f64>, TensorError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(',')
        .map(|tok| {
            let tok = tok.trim();
            f64::from_str(tok)
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TensorError::Invalid(format!("bad shift `{tok}`")))
        })
        .collect()
}

/// One row per shift: the mean over `num_sets` sets of the per-point average
/// log-likelihood. The same test sets are reused for every shift.
pub fn evaluate_shifts(
    scorer: Scorer<'_>,
    mog: &MogConfig,
    shifts: &[f64],
    num_sets: usize,
    seed: u64,
) -> Result<Vec<ShiftRow>, TensorError> {
    let batch = sample_mog(mog, num_sets, derive_seed(seed, "eval-sets"))?;
    let mut rows = Vec::with_capacity(shifts.len());
    for &shift in shifts {
        if !shift.is_finite() {
            return Err(TensorError::Invalid(format!("bad shift `{shift}`")));
        }
        let mut total = 0.0;
        for set in &batch.sets {
            let x: Tensor = shift_set(&set.points, shift);
            total += match scorer {
                Scorer::Model(m) => m.avg_log_likelihood(&[&x])?,
                Scorer::Oracle => {
                    let p = set.params.as_ref().expect("generated sets carry parameters");
                    gmm_log_likelihood(&x, &p.shifted(shift))?
                }
            };
        }
        rows.push(ShiftRow {
            shift,
            avg_ll: total / num_sets as f64,
            num_sets,
            seed,
        });
    }
    Ok(rows)
}

/// Shortest decimal for the shift, six decimals for the likelihood.
pub fn write_metrics_csv<W: Write>(rows: &[ShiftRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{:.6},{},{}", r.shift, r.avg_ll, r.num_sets, r.seed)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_lists() {
        assert_eq!(parse_shifts("0,8,-8").unwrap(), vec![0.0, 8.0, -8.0]);
        assert_eq!(parse_shifts(" ").unwrap(), Vec::<f64>::new());
        assert!(parse_shifts("0,,8").is_err());
        assert!(parse_shifts("eight").is_err());
        assert!(parse_shifts("inf").is_err());
    }

    #[test]
    fn oracle_is_shift_invariant() {
        let rows = evaluate_shifts(Scorer::Oracle, &MogConfig::default(), &[0.0, -12.0], 5, 3).unwrap();
        assert!((rows[0].avg_ll - rows[1].avg_ll).abs() < 1e-10);
    }

    #[test]
    fn csv_layout() {
        let rows = [ShiftRow {
            shift: -8.0,
            avg_ll: -1.5,
            num_sets: 10,
            seed: 7,
        }];
        let mut buf = vec![];
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "shift,avg_ll,num_sets,seed\n-8,-1.500000,10,7\n"
        );
    }
}
