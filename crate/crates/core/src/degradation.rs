//! Quality loss incurred when a prompt is served by a faster variant than its
//! optimal one.

use thiserror::Error;

use crate::catalog::Variant;

#[derive(Debug, Error, PartialEq)]
pub enum DegradationError {
    #[error("degradation table must be square, row {row} has {len} entries for {n} levels")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("D({to}, {from}) = {value} must be zero")]
    NonZero { to: usize, from: usize, value: f64 },
    #[error("D({to}, {from}) = {value} is negative or not finite")]
    Negative { to: usize, from: usize, value: f64 },
    #[error("D(., {from}) is not strictly increasing and convex in the level gap at {to}")]
    NotSuperLinear { to: usize, from: usize },
}

/// `D(to, from)` indexed by level: loss when a prompt whose optimal level is
/// `from` is served at level `to`. Zero unless `to` is faster than `from`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationTable {
    values: Vec<Vec<f64>>,
}

impl DegradationTable {
    /// `gap^2 * (Q_from - Q_to)` for faster targets, 0 otherwise.
    pub fn from_variants(variants: &[Variant]) -> Self {
        let q: Vec<f64> = variants.iter().map(|v| v.avg_quality).collect();
        Self::from_qualities(&q)
    }

    pub fn from_qualities(avg_quality: &[f64]) -> Self {
        Self::from_fn(avg_quality.len(), |to, from| {
            let gap = (to - from) as f64;
            gap * gap * (avg_quality[from] - avg_quality[to])
        })
    }

    /// Builds a table from `f(to, from)`, which is only consulted for `to > from`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..n)
            .map(|to| (0..n).map(|from| if to > from { f(to, from) } else { 0.0 }).collect())
            .collect();
        Self { values }
    }

    /// Accepts a user table after checking the invariants every caller relies on.
    pub fn from_table(values: Vec<Vec<f64>>) -> Result<Self, DegradationError> {
        let table = Self { values };
        table.validate()?;
        Ok(table)
    }

    pub fn levels(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, to: usize, from: usize) -> f64 {
        self.values[to][from]
    }

    /// Zero diagonal and slower shifts, and for every source a faster-shift
    /// loss that is strictly increasing with strictly increasing increments.
    pub fn validate(&self) -> Result<(), DegradationError> {
        let n = self.values.len();
        for (row, r) in self.values.iter().enumerate() {
            if r.len() != n {
                return Err(DegradationError::NotSquare { row, len: r.len(), n });
            }
        }
        for to in 0..n {
            for from in 0..n {
                let value = self.values[to][from];
                if !value.is_finite() || value < 0.0 {
                    return Err(DegradationError::Negative { to, from, value });
                }
                if to <= from && value != 0.0 {
                    return Err(DegradationError::NonZero { to, from, value });
                }
            }
        }
        for from in 0..n {
            let mut prev = 0.0;
            let mut prev_step = 0.0;
            for to in from + 1..n {
                let value = self.values[to][from];
                let step = value - prev;
                if step <= 0.0 || (to > from + 1 && step <= prev_step) {
                    return Err(DegradationError::NotSuperLinear { to, from });
                }
                prev = value;
                prev_step = step;
            }
        }
        Ok(())
    }
}
