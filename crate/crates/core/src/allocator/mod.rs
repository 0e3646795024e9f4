//! Worker-to-variant allocation maximizing load-weighted quality.
//!
//! Given an expected load `W` (integer QPM) and `n` homogeneous workers,
//! choose one variant per worker and an integer load `y_w <= P_th` per worker
//! with `sum y_w = W`, maximizing `sum_v Q_v * F(v)` where `F(v)` is the
//! fraction of `W` served by variant `v`. Because workers are
//! interchangeable, the search runs over variant-count compositions and fills
//! each composition greedily from the highest-quality variant down.

mod brute_force;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Strategy, Variant};

pub use brute_force::{brute_force_allocation, BRUTE_FORCE_MAX_VARIANTS, BRUTE_FORCE_MAX_WORKERS};

const OBJECTIVE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("no variants to allocate")]
    EmptyCatalog,
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("brute force limited to {max_workers} workers and {max_variants} variants, got {workers} and {variants}")]
    TooLarge {
        workers: usize,
        variants: usize,
        max_workers: usize,
        max_variants: usize,
    },
}

/// Expected queries per minute for the next interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorkloadEstimate {
    pub w_t_qpm: f64,
}

impl WorkloadEstimate {
    pub fn new(w_t_qpm: f64) -> Self {
        Self { w_t_qpm: w_t_qpm.max(0.0) }
    }

    /// Integer QPM target the solver works with.
    pub fn target_qpm(&self) -> u32 {
        // tolerate float noise from smoothing or margins before rounding up
        (self.w_t_qpm - 1e-9).ceil().max(0.0) as u32
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.w_t_qpm * factor)
    }
}

/// Arrivals within `[now - window_s, now)`, expressed per minute.
pub fn estimate_workload(arrivals: &[f64], now: f64, window_s: f64) -> WorkloadEstimate {
    let lo = arrivals.partition_point(|t| *t < now - window_s);
    let hi = arrivals.partition_point(|t| *t < now);
    WorkloadEstimate::new((hi - lo) as f64 * 60.0 / window_s)
}

/// Per-minute load estimator with optional exponential smoothing.
#[derive(Debug, Clone, Default)]
pub struct WorkloadEstimator {
    alpha: Option<f64>,
    state: Option<f64>,
}

impl WorkloadEstimator {
    pub fn new(alpha: Option<f64>) -> Self {
        Self { alpha, state: None }
    }

    pub fn observe(&mut self, qpm: f64) -> WorkloadEstimate {
        let next = match (self.alpha, self.state) {
            (Some(a), Some(prev)) => a * qpm + (1.0 - a) * prev,
            _ => qpm,
        };
        self.state = Some(next);
        WorkloadEstimate::new(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationPlan {
    pub strategy: Strategy,
    /// Level assigned to each worker slot.
    pub assignment: Vec<usize>,
    /// QPM routed to each worker slot.
    pub loads: Vec<u32>,
    /// Fraction of the load served per level. When the target is zero this is
    /// the capacity share, so it always sums to one.
    pub f_dist: Vec<f64>,
    /// `sum_v Q_v * F(v)`.
    pub objective: f64,
    pub target_qpm: u32,
    /// Load exceeded total capacity; the plan is the saturated all-fastest one.
    pub infeasible: bool,
}

impl AllocationPlan {
    pub fn workers(&self) -> usize {
        self.assignment.len()
    }

    /// Workers per level.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.f_dist.len()];
        for &l in &self.assignment {
            counts[l] += 1;
        }
        counts
    }

    pub fn total_load(&self) -> u32 {
        self.loads.iter().sum()
    }

    pub fn distinct_variants(&self) -> usize {
        self.counts().iter().filter(|c| **c > 0).count()
    }

    /// Checks every structural invariant against the variant profile.
    pub fn check(&self, variants: &[Variant]) -> Result<(), String> {
        if self.assignment.len() != self.loads.len() {
            return Err("assignment and loads differ in length".into());
        }
        for (w, (&level, &y)) in self.assignment.iter().zip(&self.loads).enumerate() {
            let cap = variants[level].peak_throughput_qpm;
            if y > cap {
                return Err(format!("worker {w} load {y} exceeds P_th {cap}"));
            }
        }
        let total = self.total_load();
        if !self.infeasible && total != self.target_qpm {
            return Err(format!("loads sum to {total}, target {}", self.target_qpm));
        }
        if self.infeasible && total >= self.target_qpm {
            return Err("infeasible plan covers its target".into());
        }
        let sum: f64 = self.f_dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("f_dist sums to {sum}"));
        }
        if total > 0 {
            for (level, f) in self.f_dist.iter().enumerate() {
                let served: u32 = self
                    .assignment
                    .iter()
                    .zip(&self.loads)
                    .filter(|(l, _)| **l == level)
                    .map(|(_, y)| *y)
                    .sum();
                if (f - f64::from(served) / f64::from(total)).abs() > 1e-9 {
                    return Err(format!("f_dist[{level}] = {f} disagrees with loads"));
                }
            }
        }
        Ok(())
    }
}

/// Builds a plan from per-level worker counts and per-slot loads.
fn plan_from_slots(
    variants: &[Variant],
    assignment: Vec<usize>,
    loads: Vec<u32>,
    target_qpm: u32,
    infeasible: bool,
) -> AllocationPlan {
    let n = variants.len();
    let mut f_dist = vec![0.0; n];
    let total: u32 = loads.iter().sum();
    if total > 0 {
        for (&l, &y) in assignment.iter().zip(&loads) {
            f_dist[l] += f64::from(y);
        }
        for f in &mut f_dist {
            *f /= f64::from(total);
        }
    } else {
        let cap: u32 = assignment.iter().map(|&l| variants[l].peak_throughput_qpm).sum();
        for &l in &assignment {
            f_dist[l] += f64::from(variants[l].peak_throughput_qpm) / f64::from(cap);
        }
    }
    let objective = f_dist.iter().zip(variants).map(|(f, v)| f * v.avg_quality).sum();
    AllocationPlan {
        strategy: variants[0].strategy,
        assignment,
        loads,
        f_dist,
        objective,
        target_qpm,
        infeasible,
    }
}

/// All-fastest plan with every worker at peak throughput.
pub(crate) fn saturated_plan(variants: &[Variant], n_workers: usize, target_qpm: u32) -> AllocationPlan {
    let fastest = variants.len() - 1;
    let cap = variants[fastest].peak_throughput_qpm;
    plan_from_slots(variants, vec![fastest; n_workers], vec![cap; n_workers], target_qpm, true)
}

/// Candidate ordering shared by the exact and brute-force solvers: higher
/// objective, then fewer distinct variants, then more workers on slower levels.
pub(crate) fn better(a: &AllocationPlan, b: &AllocationPlan) -> bool {
    if a.objective > b.objective + OBJECTIVE_EPS {
        return true;
    }
    if a.objective + OBJECTIVE_EPS < b.objective {
        return false;
    }
    let (da, db) = (a.distinct_variants(), b.distinct_variants());
    if da != db {
        return da < db;
    }
    a.counts() > b.counts()
}

fn fill_composition(variants: &[Variant], counts: &[usize], target: u32) -> Option<AllocationPlan> {
    let capacity: u32 = counts
        .iter()
        .zip(variants)
        .map(|(c, v)| *c as u32 * v.peak_throughput_qpm)
        .sum();
    if capacity < target {
        return None;
    }
    // highest quality first, slower first on ties
    let mut order: Vec<usize> = (0..variants.len()).collect();
    order.sort_by(|&a, &b| variants[b].avg_quality.total_cmp(&variants[a].avg_quality).then(a.cmp(&b)));
    let mut assignment = Vec::new();
    let mut loads = Vec::new();
    let mut remaining = target;
    for &level in &order {
        for _ in 0..counts[level] {
            let y = remaining.min(variants[level].peak_throughput_qpm);
            remaining -= y;
            assignment.push(level);
            loads.push(y);
        }
    }
    // present slots slowest level first
    let mut slots: Vec<(usize, u32)> = assignment.into_iter().zip(loads).collect();
    slots.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let (assignment, loads) = slots.into_iter().unzip();
    Some(plan_from_slots(variants, assignment, loads, target, false))
}

fn for_each_composition(levels: usize, workers: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(counts: &mut Vec<usize>, level: usize, left: usize, f: &mut impl FnMut(&[usize])) {
        if level + 1 == counts.len() {
            counts[level] = left;
            f(counts);
            return;
        }
        for c in (0..=left).rev() {
            counts[level] = c;
            rec(counts, level + 1, left - c, f);
        }
    }
    let mut counts = vec![0; levels];
    rec(&mut counts, 0, workers, f);
}

/// Exact optimum over integer loads and one variant per worker. `variants`
/// must be ordered slowest first. Loads above total capacity yield the
/// saturated all-fastest plan flagged infeasible.
pub fn solve_allocation(
    w_t: WorkloadEstimate,
    variants: &[Variant],
    n_workers: usize,
) -> Result<AllocationPlan, AllocError> {
    if variants.is_empty() {
        return Err(AllocError::EmptyCatalog);
    }
    if n_workers == 0 {
        return Err(AllocError::NoWorkers);
    }
    let target = w_t.target_qpm();
    let max_cap = n_workers as u64 * u64::from(variants.iter().map(|v| v.peak_throughput_qpm).max().unwrap_or(0));
    if u64::from(target) > max_cap {
        return Ok(saturated_plan(variants, n_workers, target));
    }
    let mut best: Option<AllocationPlan> = None;
    for_each_composition(variants.len(), n_workers, &mut |counts| {
        if let Some(plan) = fill_composition(variants, counts, target) {
            if best.as_ref().map_or(true, |b| better(&plan, b)) {
                best = Some(plan);
            }
        }
    });
    Ok(best.expect("max-capacity composition is always feasible"))
}

/// Objective of the LP relaxation with fractional worker counts and loads;
/// an upper bound on the integer optimum for feasible targets. Test aid.
pub fn continuous_relaxation(w_t: f64, variants: &[Variant], n_workers: usize) -> Option<f64> {
    let n = n_workers as f64;
    if w_t <= 0.0 {
        return variants.iter().map(|v| v.avg_quality).reduce(f64::max);
    }
    let p = |v: &Variant| f64::from(v.peak_throughput_qpm);
    let mut best: Option<f64> = None;
    let mut offer = |q: f64| best = Some(best.map_or(q, |b: f64| b.max(q)));
    for v in variants {
        if w_t / p(v) <= n + 1e-12 {
            offer(v.avg_quality);
        }
    }
    for (i, a) in variants.iter().enumerate() {
        for b in &variants[i + 1..] {
            // l_a + l_b = W and l_a / P_a + l_b / P_b = n
            let denom = 1.0 / p(a) - 1.0 / p(b);
            if denom.abs() < 1e-15 {
                continue;
            }
            let la = (n - w_t / p(b)) / denom;
            if (-1e-9..=w_t + 1e-9).contains(&la) {
                let la = la.clamp(0.0, w_t);
                offer((a.avg_quality * la + b.avg_quality * (w_t - la)) / w_t);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, CatalogConfig, VariantConfig};

    fn two_variant_catalog() -> Catalog {
        Catalog::build(&CatalogConfig {
            variants: vec![
                VariantConfig {
                    id: "a".into(),
                    strategy: Strategy::Sm,
                    latency_s: 4.2,
                    load_time_s: 1.0,
                    avg_quality: 1.0,
                    k_skip: 0,
                },
                VariantConfig {
                    id: "b".into(),
                    strategy: Strategy::Sm,
                    latency_s: 2.18,
                    load_time_s: 1.0,
                    avg_quality: 0.8,
                    k_skip: 0,
                },
            ],
            ..CatalogConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn two_worker_example() {
        let c = two_variant_catalog();
        let v = c.variants(Strategy::Sm);
        assert_eq!(v[0].peak_throughput_qpm, 14);
        assert_eq!(v[1].peak_throughput_qpm, 27);
        let plan = solve_allocation(WorkloadEstimate::new(30.0), v, 2).unwrap();
        assert_eq!(plan.assignment, vec![0, 1]);
        assert_eq!(plan.loads, vec![14, 16]);
        let expected = 1.0 * 14.0 / 30.0 + 0.8 * 16.0 / 30.0;
        assert!((plan.objective - expected).abs() < 1e-12);
        assert!(plan.objective > 0.8);
        assert!(!plan.infeasible);
        plan.check(v).unwrap();
    }

    #[test]
    fn zero_load_uses_slowest_everywhere() {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let v = c.variants(Strategy::Ac);
        let plan = solve_allocation(WorkloadEstimate::new(0.0), v, 8).unwrap();
        assert_eq!(plan.assignment, vec![0; 8]);
        assert_eq!(plan.loads, vec![0; 8]);
        assert_eq!(plan.f_dist[0], 1.0);
        plan.check(v).unwrap();
    }

    #[test]
    fn light_load_stays_on_slowest() {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let v = c.variants(Strategy::Sm);
        for w in [1.0, 50.0, 112.0] {
            let plan = solve_allocation(WorkloadEstimate::new(w), v, 8).unwrap();
            assert_eq!(plan.assignment, vec![0; 8], "W={w}");
            assert!((plan.objective - v[0].avg_quality).abs() < 1e-12);
        }
    }

    #[test]
    fn overload_saturates() {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let v = c.variants(Strategy::Sm);
        let plan = solve_allocation(WorkloadEstimate::new(300.0), v, 8).unwrap();
        assert!(plan.infeasible);
        assert_eq!(plan.assignment, vec![3; 8]);
        assert_eq!(plan.total_load(), 8 * 27);
        assert_eq!(plan.f_dist, vec![0.0, 0.0, 0.0, 1.0]);
        plan.check(v).unwrap();
    }

    #[test]
    fn errors() {
        assert_eq!(solve_allocation(WorkloadEstimate::new(1.0), &[], 2).unwrap_err(), AllocError::EmptyCatalog);
        let c = two_variant_catalog();
        assert_eq!(
            solve_allocation(WorkloadEstimate::new(1.0), c.variants(Strategy::Sm), 0).unwrap_err(),
            AllocError::NoWorkers
        );
    }

    #[test]
    fn workload_estimation() {
        let arrivals: Vec<f64> = (0..120).map(|i| 60.0 + i as f64 * 0.5).collect();
        assert_eq!(estimate_workload(&arrivals, 120.0, 60.0).w_t_qpm, 120.0);
        assert_eq!(estimate_workload(&[], 120.0, 60.0).w_t_qpm, 0.0);
        let mut est = WorkloadEstimator::new(Some(0.5));
        est.observe(100.0);
        assert_eq!(est.observe(200.0).w_t_qpm, 150.0);
        let mut plain = WorkloadEstimator::new(None);
        plain.observe(100.0);
        assert_eq!(plain.observe(200.0).w_t_qpm, 200.0);
    }

    #[test]
    fn target_rounds_up() {
        assert_eq!(WorkloadEstimate::new(292.5).target_qpm(), 293);
        assert_eq!(WorkloadEstimate::new(195.0 * 1.5).target_qpm(), 293);
        assert_eq!(WorkloadEstimate::new(120.0).target_qpm(), 120);
    }

    #[test]
    fn relaxation_bounds_integer_optimum() {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let v = c.variants(Strategy::Ac);
        for w in (0..=216).step_by(7) {
            let plan = solve_allocation(WorkloadEstimate::new(w as f64), v, 8).unwrap();
            let bound = continuous_relaxation(w as f64, v, 8).unwrap();
            assert!(plan.objective <= bound + 1e-9, "W={w}: {} > {bound}", plan.objective);
        }
    }
}
