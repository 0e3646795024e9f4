//! Distribution aligner: turns the affinity histogram `H` and the allocation's
//! load distribution `F` into a row-stochastic shift map (PASM).
//!
//! Levels are indexed slowest (0) to fastest (n - 1). Levels are visited from
//! the fastest down. A level holding more mass than it can serve pushes the
//! excess one level slower, which costs no quality. A level holding less pulls
//! the shortfall from the nearest slower levels first. Per-step fractions
//! compose along the push chain into full transition probabilities
//! `P(target | source)`.

mod oracle;

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::degradation::DegradationTable;

pub use oracle::{min_degradation_oracle, TransportPlan, ORACLE_MAX_DENOMINATOR, ORACLE_MAX_LEVELS};

/// Residuals below this are treated as zero.
pub const RESIDUAL_EPS: f64 = 1e-12;
/// Allowed deviation of an input distribution's mass from one before it is
/// rejected rather than renormalized.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum OdaError {
    #[error("H has {h} levels but F has {f}")]
    LengthMismatch { h: usize, f: usize },
    #[error("{which} has no levels")]
    Empty { which: &'static str },
    #[error("{which} must be a distribution, sums to {sum}")]
    NotDistribution { which: &'static str, sum: f64 },
    #[error("{which}[{level}] = {value} is negative")]
    Negative { which: &'static str, level: usize, value: f64 },
    #[error("no PASM row for level {0}")]
    MissingRow(usize),
    #[error("instance with {0} levels exceeds the oracle limit")]
    TooLarge(usize),
    #[error("{0} is not on a rational grid with denominator <= {ORACLE_MAX_DENOMINATOR}")]
    OffGrid(&'static str),
}

/// Probabilistic shift map: `rows[source][target]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pasm {
    pub rows: Vec<Vec<f64>>,
    /// Resolve tick that produced this map.
    pub epoch: u64,
    /// A deficit could not be covered from slower levels alone.
    pub extended_scan: bool,
}

impl Pasm {
    pub fn identity(levels: usize) -> Self {
        let rows = (0..levels)
            .map(|i| (0..levels).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            rows,
            epoch: 0,
            extended_scan: false,
        }
    }

    pub fn levels(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, source: usize) -> Result<&[f64], OdaError> {
        self.rows.get(source).map(Vec::as_slice).ok_or(OdaError::MissingRow(source))
    }

    /// `sum_i H(i) P(j | i)` for every target `j`.
    pub fn pushforward(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.levels()];
        for (hi, row) in h.iter().zip(&self.rows) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += hi * p;
            }
        }
        out
    }

    /// Text matrix with one labelled row per source level.
    pub fn dump(&self, labels: &[&str]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# pasm epoch={} extended_scan={}", self.epoch, self.extended_scan);
        let _ = write!(out, "from\\to");
        for l in labels {
            let _ = write!(out, " {l}");
        }
        out.push('\n');
        for (label, row) in labels.iter().zip(&self.rows) {
            let _ = write!(out, "{label}");
            for p in row {
                let _ = write!(out, " {p:.6}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_distribution(which: &'static str, d: &[f64]) -> Result<Vec<f64>, OdaError> {
    if d.is_empty() {
        return Err(OdaError::Empty { which });
    }
    for (level, &value) in d.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(OdaError::Negative { which, level, value });
        }
    }
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > MASS_TOLERANCE {
        return Err(OdaError::NotDistribution { which, sum });
    }
    if sum != 1.0 {
        // summation noise is routine; only report real drift
        if (sum - 1.0).abs() > 1e-12 {
            log::warn!("{which} mass {sum} renormalized");
        } else {
            log::trace!("{which} mass {sum} renormalized");
        }
    }
    Ok(d.iter().map(|x| x / sum).collect())
}

/// Runs the aligner on histogram `h` and load distribution `f`.
pub fn compute_pasm(h: &[f64], f: &[f64]) -> Result<Pasm, OdaError> {
    if h.len() != f.len() {
        return Err(OdaError::LengthMismatch { h: h.len(), f: f.len() });
    }
    let h_old = check_distribution("H", h)?;
    let f = check_distribution("F", f)?;
    let n = h_old.len();

    let mut h_cur = h_old.clone();
    // direct pulls: pull[source][target], fraction of the source's original mass
    let mut pull = vec![vec![0.0; n]; n];
    // fraction of everything present at a level that moves one level slower
    let mut push = vec![0.0; n];
    let mut extended_scan = false;

    for i in (0..n).rev() {
        let excess = h_cur[i] - f[i];
        if excess > RESIDUAL_EPS {
            if i == 0 {
                // nowhere slower to go; only reachable through rounding
                extended_scan |= excess > 1e-9;
                continue;
            }
            push[i] = excess / h_cur[i];
            h_cur[i - 1] += excess;
            h_cur[i] = f[i];
        } else if excess < -RESIDUAL_EPS {
            let mut need = -excess;
            for src in (0..i).rev() {
                if need <= RESIDUAL_EPS {
                    break;
                }
                let shift = h_cur[src].min(need);
                if shift <= 0.0 {
                    continue;
                }
                pull[src][i] += shift / h_old[src];
                h_cur[src] -= shift;
                h_cur[i] += shift;
                need -= shift;
            }
            if need > 1e-9 {
                // Faster levels are already balanced, so there is nothing
                // left to scan; surface the shortfall instead.
                extended_scan = true;
            }
        } else if h_cur[i] <= RESIDUAL_EPS && f[i] <= RESIDUAL_EPS && i > 0 {
            // empty level with no capacity: anything routed here moves on
            push[i] = 1.0;
        }
    }

    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        let mut row = vec![0.0; n];
        let mut carry = 1.0;
        if h_old[s] > 0.0 {
            for t in s + 1..n {
                row[t] = pull[s][t];
                carry -= pull[s][t];
            }
        }
        let mut k = s;
        loop {
            row[k] += carry * (1.0 - push[k]);
            carry *= push[k];
            if carry <= 0.0 || k == 0 {
                row[k] += carry;
                break;
            }
            k -= 1;
        }
        if h_old[s] <= 0.0 {
            redirect_to_capacity(&mut row, &f);
        }
        clean_row(&mut row);
        rows.push(row);
    }
    Ok(Pasm {
        rows,
        epoch: 0,
        extended_scan,
    })
}

/// Moves mass sitting on zero-capacity levels to the nearest faster level
/// with capacity, or the nearest slower one if none is faster.
fn redirect_to_capacity(row: &mut [f64], f: &[f64]) {
    let n = row.len();
    for k in 0..n {
        if row[k] > 0.0 && f[k] <= RESIDUAL_EPS {
            let dest = (k + 1..n)
                .find(|&j| f[j] > RESIDUAL_EPS)
                .or_else(|| (0..k).rev().find(|&j| f[j] > RESIDUAL_EPS));
            if let Some(j) = dest {
                row[j] += row[k];
                row[k] = 0.0;
            }
        }
    }
}

fn clean_row(row: &mut [f64]) {
    for p in row.iter_mut() {
        if *p < RESIDUAL_EPS {
            *p = 0.0;
        }
    }
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
}

/// Expected quality loss of routing `h` through `pasm`; only shifts to faster
/// levels contribute.
pub fn expected_degradation(pasm: &Pasm, h: &[f64], d: &DegradationTable) -> f64 {
    let mut total = 0.0;
    for (s, row) in pasm.rows.iter().enumerate() {
        for (t, p) in row.iter().enumerate().skip(s + 1) {
            total += p * h[s] * d.get(t, s);
        }
    }
    total
}

/// Categorical draw from the row of `predicted`.
pub fn route_sample<R: Rng + ?Sized>(pasm: &Pasm, predicted: usize, rng: &mut R) -> Result<usize, OdaError> {
    let row = pasm.row(predicted)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(j);
        }
    }
    Ok(row.iter().rposition(|p| *p > 0.0).unwrap_or(predicted))
}
