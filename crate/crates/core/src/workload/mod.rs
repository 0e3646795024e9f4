//! Request arrival streams and synthetic prompts.
//!
//! Traces are plain text, one arrival per line: `arrival_time_s [tag]`.
//! Blank lines and lines starting with `#` are skipped, except a
//! `# duration_s=<secs>` header, which extends the trace past its last arrival.

mod generate;
mod prompt;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub use generate::{gen_bursty, gen_piecewise, gen_poisson, gen_ramp};
pub use prompt::{synthesize_prompt, AffinityModel, PromptRequest};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read trace {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("trace {path} line {line}: cannot parse `{text}` as an arrival time")]
    Parse { path: String, line: usize, text: String },
    #[error("trace {path} line {line}: negative arrival time {value}")]
    Negative { path: String, line: usize, value: f64 },
    #[error("trace {0} contains no arrivals")]
    Empty(String),
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid affinity model: {0}")]
    InvalidAffinity(String),
}

/// Ordered arrival timestamps, seconds from time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalTrace {
    pub name: String,
    pub arrivals: Vec<f64>,
    pub duration_s: f64,
    /// Out-of-order records fixed up while loading.
    pub reordered: usize,
}

impl ArrivalTrace {
    pub fn new(name: impl Into<String>, mut arrivals: Vec<f64>, duration_s: f64) -> Self {
        let reordered = arrivals.windows(2).filter(|w| w[1] < w[0]).count();
        if reordered > 0 {
            arrivals.sort_by(f64::total_cmp);
        }
        let duration_s = arrivals.last().copied().unwrap_or(0.0).max(duration_s);
        Self {
            name: name.into(),
            arrivals,
            duration_s,
            reordered,
        }
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// Arrival counts per whole minute of the trace duration.
    pub fn per_minute_counts(&self) -> Vec<usize> {
        let minutes = ((self.duration_s / 60.0).ceil() as usize).max(usize::from(!self.arrivals.is_empty()));
        let mut counts = vec![0; minutes];
        for t in &self.arrivals {
            let m = ((t / 60.0) as usize).min(minutes - 1);
            counts[m] += 1;
        }
        counts
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        let mut out = io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "# {}", self.name)?;
        writeln!(out, "# duration_s={}", self.duration_s)?;
        for t in &self.arrivals {
            writeln!(out, "{t}")?;
        }
        out.flush()
    }
}

pub fn load_trace(path: &Path) -> Result<ArrivalTrace, WorkloadError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: display.clone(),
        source,
    })?;
    let trace = parse_trace(&display, &text)?;
    if trace.reordered > 0 {
        log::warn!("trace {display}: {} out-of-order arrivals sorted", trace.reordered);
    }
    Ok(trace)
}

pub fn parse_trace(name: &str, text: &str) -> Result<ArrivalTrace, WorkloadError> {
    let mut arrivals = Vec::new();
    let mut duration_s = 0.0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(d) = line.strip_prefix('#').and_then(|c| c.trim().strip_prefix("duration_s=")) {
            duration_s = d.trim().parse().map_err(|_| WorkloadError::Parse {
                path: name.to_string(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split_whitespace().next().unwrap_or_default();
        let value: f64 = field.parse().map_err(|_| WorkloadError::Parse {
            path: name.to_string(),
            line: i + 1,
            text: raw.to_string(),
        })?;
        if !value.is_finite() {
            return Err(WorkloadError::Parse {
                path: name.to_string(),
                line: i + 1,
                text: raw.to_string(),
            });
        }
        if value < 0.0 {
            return Err(WorkloadError::Negative {
                path: name.to_string(),
                line: i + 1,
                value,
            });
        }
        arrivals.push(value);
    }
    if arrivals.is_empty() {
        return Err(WorkloadError::Empty(name.to_string()));
    }
    Ok(ArrivalTrace::new(name, arrivals, duration_s))
}
