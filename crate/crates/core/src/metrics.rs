//! Per-minute and aggregate serving metrics, CSV export.

use std::fs::File;
use std::io;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Catalog, VariantKey};

/// Column order of the metrics CSV.
pub const CSV_COLUMNS: [&str; 6] = [
    "minute",
    "throughput_qpm",
    "slo_violation_ratio",
    "effective_quality",
    "relative_quality_pct",
    "utilization_pct",
];

/// Label of the aggregate row in the `minute` column.
pub const AGGREGATE_LABEL: &str = "all";

/// SLO as a multiple of the slowest variant's latency.
pub const SLO_FACTOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad metrics csv: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRecord {
    pub prompt_id: u64,
    pub arrival_time_s: f64,
    pub start_service_s: f64,
    pub finish_s: f64,
    pub served_variant: VariantKey,
    pub worker: usize,
    pub quality: f64,
    /// Best score the prompt could have received from any variant.
    pub best_quality: f64,
    pub retrieval_overhead_s: f64,
}

impl CompletionRecord {
    pub fn latency_s(&self) -> f64 {
        self.finish_s - self.arrival_time_s
    }
}

/// Busy and alive intervals per worker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Usage {
    pub busy: Vec<Vec<(f64, f64)>>,
    pub alive: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    /// `None` on the aggregate row.
    pub minute: Option<u32>,
    pub throughput_qpm: f64,
    pub slo_violation_ratio: f64,
    pub effective_quality: f64,
    pub relative_quality_pct: f64,
    pub utilization_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_minute: Vec<MetricsRow>,
    pub aggregate: MetricsRow,
    pub slo_threshold_s: f64,
    pub completions: usize,
    pub violations: usize,
    /// No completions; ratios are reported as zero.
    pub empty: bool,
}

impl MetricsReport {
    pub fn rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.per_minute.iter().chain(std::iter::once(&self.aggregate))
    }
}

pub fn slo_threshold(catalog: &Catalog) -> f64 {
    SLO_FACTOR * catalog.max_effective_latency()
}

pub fn violates(c: &CompletionRecord, slo_s: f64) -> bool {
    c.latency_s() > slo_s + 1e-9
}

fn overlap(intervals: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    intervals.iter().map(|(a, b)| (b.min(hi) - a.max(lo)).max(0.0)).sum()
}

#[derive(Default)]
struct Acc {
    n: usize,
    violations: usize,
    within_quality: f64,
    within: usize,
    relative: f64,
}

impl Acc {
    fn add(&mut self, c: &CompletionRecord, slo_s: f64) {
        self.n += 1;
        if violates(c, slo_s) {
            self.violations += 1;
        } else {
            self.within += 1;
            self.within_quality += c.quality;
        }
        if c.best_quality > 0.0 {
            self.relative += (100.0 * c.quality / c.best_quality).clamp(0.0, 100.0);
        }
    }

    fn row(&self, minute: Option<u32>, minutes: f64, busy: f64, alive: f64) -> MetricsRow {
        let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
        MetricsRow {
            minute,
            throughput_qpm: if minutes > 0.0 { self.n as f64 / minutes } else { 0.0 },
            slo_violation_ratio: ratio(self.violations as f64, self.n),
            effective_quality: ratio(self.within_quality, self.within),
            relative_quality_pct: ratio(self.relative, self.n),
            utilization_pct: if alive > 0.0 { (100.0 * busy / alive).min(100.0) } else { 0.0 },
        }
    }
}

/// Buckets completions by finish minute over `duration_s` (rounded up to
/// whole minutes) and computes every metric.
pub fn finalize(completions: &[CompletionRecord], usage: &Usage, catalog: &Catalog, duration_s: f64) -> MetricsReport {
    let slo_s = slo_threshold(catalog);
    let last_finish = completions.iter().map(|c| c.finish_s).fold(0.0, f64::max);
    let minutes = (duration_s.max(last_finish) / 60.0).ceil() as usize;
    let mut per = (0..minutes).map(|_| Acc::default()).collect::<Vec<_>>();
    let mut all = Acc::default();
    for c in completions {
        let m = ((c.finish_s / 60.0).floor() as usize).min(minutes.saturating_sub(1));
        per[m].add(c, slo_s);
        all.add(c, slo_s);
    }
    let sum_overlap = |sets: &[Vec<(f64, f64)>], lo: f64, hi: f64| sets.iter().map(|s| overlap(s, lo, hi)).sum::<f64>();
    let per_minute = per
        .iter()
        .enumerate()
        .map(|(m, acc)| {
            let (lo, hi) = (m as f64 * 60.0, (m + 1) as f64 * 60.0);
            acc.row(Some(m as u32), 1.0, sum_overlap(&usage.busy, lo, hi), sum_overlap(&usage.alive, lo, hi))
        })
        .collect();
    let end = minutes as f64 * 60.0;
    let aggregate = all.row(None, minutes as f64, sum_overlap(&usage.busy, 0.0, end), sum_overlap(&usage.alive, 0.0, end));
    MetricsReport {
        per_minute,
        aggregate,
        slo_threshold_s: slo_s,
        completions: all.n,
        violations: all.violations,
        empty: all.n == 0,
    }
}

fn row_record(r: &MetricsRow) -> [String; 6] {
    [
        r.minute.map_or_else(|| AGGREGATE_LABEL.to_string(), |m| m.to_string()),
        r.throughput_qpm.to_string(),
        r.slo_violation_ratio.to_string(),
        r.effective_quality.to_string(),
        r.relative_quality_pct.to_string(),
        r.utilization_pct.to_string(),
    ]
}

pub fn write_csv<W: io::Write>(report: &MetricsReport, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in report.rows() {
        w.write_record(row_record(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(report: &MetricsReport, path: &Path) -> Result<(), MetricsError> {
    write_csv(report, File::create(path)?)
}

/// Parses a metrics CSV back into rows; the aggregate row comes last.
pub fn parse_csv<R: io::Read>(input: R) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(MetricsError::Format(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, MetricsError> {
            rec[i].parse().map_err(|_| MetricsError::Format(format!("bad number {:?}", &rec[i])))
        };
        let minute = if &rec[0] == AGGREGATE_LABEL {
            None
        } else {
            Some(rec[0].parse().map_err(|_| MetricsError::Format(format!("bad minute {:?}", &rec[0])))?)
        };
        rows.push(MetricsRow {
            minute,
            throughput_qpm: num(1)?,
            slo_violation_ratio: num(2)?,
            effective_quality: num(3)?,
            relative_quality_pct: num(4)?,
            utilization_pct: num(5)?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    parse_csv(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogConfig, Strategy, VariantConfig};

    fn one_variant() -> Catalog {
        Catalog::build(&CatalogConfig {
            variants: vec![VariantConfig {
                id: "sdxl".into(),
                strategy: Strategy::Sm,
                latency_s: 4.2,
                load_time_s: 9.42,
                avg_quality: 20.9,
                k_skip: 0,
            }],
            ..CatalogConfig::default()
        })
        .unwrap()
    }

    fn fifo_completions() -> Vec<CompletionRecord> {
        (0..10)
            .map(|i| CompletionRecord {
                prompt_id: i,
                arrival_time_s: 0.0,
                start_service_s: 4.2 * i as f64,
                finish_s: 4.2 * (i + 1) as f64,
                served_variant: VariantKey::new(Strategy::Sm, 0),
                worker: 0,
                quality: 20.0,
                best_quality: 20.0,
                retrieval_overhead_s: 0.0,
            })
            .collect()
    }

    #[test]
    fn fifo_violations() {
        let c = one_variant();
        let comps = fifo_completions();
        let usage = Usage {
            busy: vec![vec![(0.0, 42.0)]],
            alive: vec![vec![(0.0, 60.0)]],
        };
        let r = finalize(&comps, &usage, &c, 60.0);
        assert!((r.slo_threshold_s - 12.6).abs() < 1e-12);
        assert_eq!(r.violations, 7);
        assert!((r.aggregate.slo_violation_ratio - 0.7).abs() < 1e-12);
        assert_eq!(r.aggregate.effective_quality, 20.0);
        assert_eq!(r.aggregate.relative_quality_pct, 100.0);
        assert!((r.aggregate.utilization_pct - 70.0).abs() < 1e-9);
        assert_eq!(r.per_minute.len(), 1);
        assert_eq!(r.aggregate.throughput_qpm * r.per_minute.len() as f64, r.completions as f64);
    }

    #[test]
    fn empty_run() {
        let c = one_variant();
        let r = finalize(&[], &Usage::default(), &c, 0.0);
        assert!(r.empty);
        assert_eq!(r.aggregate.throughput_qpm, 0.0);
        assert_eq!(r.aggregate.slo_violation_ratio, 0.0);
        assert!(r.per_minute.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let c = one_variant();
        let mut comps = fifo_completions();
        comps[9].finish_s = 150.0;
        comps[9].quality = 1.0 / 3.0;
        let usage = Usage {
            busy: vec![vec![(0.0, 37.8), (140.0, 150.0)]],
            alive: vec![vec![(0.0, 180.0)]],
        };
        let r = finalize(&comps, &usage, &c, 180.0);
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("minute,throughput_qpm,slo_violation_ratio"));
        assert!(text.lines().last().unwrap().starts_with("all,"));
        let rows = parse_csv(&buf[..]).unwrap();
        assert_eq!(rows, r.rows().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn bad_header_rejected() {
        assert!(parse_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
