//! Exhaustive reference solver: every variant assignment, every integer load
//! split. Only usable on tiny instances.

use super::{plan_from_slots, saturated_plan, AllocError, AllocationPlan, WorkloadEstimate};
use crate::catalog::Variant;

pub const BRUTE_FORCE_MAX_WORKERS: usize = 4;
pub const BRUTE_FORCE_MAX_VARIANTS: usize = 4;

pub fn brute_force_allocation(
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
    if n_workers > BRUTE_FORCE_MAX_WORKERS || variants.len() > BRUTE_FORCE_MAX_VARIANTS {
        return Err(AllocError::TooLarge {
            workers: n_workers,
            variants: variants.len(),
            max_workers: BRUTE_FORCE_MAX_WORKERS,
            max_variants: BRUTE_FORCE_MAX_VARIANTS,
        });
    }
    let target = w_t.target_qpm();
    let n_var = variants.len();
    let total_assignments = n_var.pow(n_workers as u32);

    let mut best: Option<(f64, Vec<usize>, Vec<u32>)> = None;
    let mut assignment = vec![0usize; n_workers];
    let mut loads = vec![0u32; n_workers];
    for code in 0..total_assignments {
        let mut c = code;
        for slot in assignment.iter_mut() {
            *slot = c % n_var;
            c /= n_var;
        }
        let caps: Vec<u32> = assignment.iter().map(|&l| variants[l].peak_throughput_qpm).collect();
        if target == 0 {
            // no load to split: score by capacity share
            let cap: u32 = caps.iter().sum();
            let obj: f64 = assignment
                .iter()
                .map(|&l| variants[l].avg_quality * f64::from(variants[l].peak_throughput_qpm) / f64::from(cap))
                .sum();
            if best.as_ref().map_or(true, |b| obj > b.0) {
                best = Some((obj, assignment.clone(), vec![0; n_workers]));
            }
            continue;
        }
        enumerate_loads(&caps, target, 0, &mut loads, &mut |ys| {
            let obj: f64 = assignment
                .iter()
                .zip(ys)
                .map(|(&l, &y)| variants[l].avg_quality * f64::from(y))
                .sum::<f64>()
                / f64::from(target);
            if best.as_ref().map_or(true, |b| obj > b.0) {
                best = Some((obj, assignment.clone(), ys.to_vec()));
            }
        });
    }
    match best {
        Some((objective, assignment, loads)) => {
            let mut plan = plan_from_slots(variants, assignment, loads, target, false);
            plan.objective = objective;
            Ok(plan)
        }
        None => Ok(saturated_plan(variants, n_workers, target)),
    }
}

/// Visits every `y` with `0 <= y[i] <= caps[i]` and `sum y = total`. The last
/// slot takes the remainder.
fn enumerate_loads(caps: &[u32], total: u32, slot: usize, ys: &mut [u32], f: &mut impl FnMut(&[u32])) {
    let last = caps.len() - 1;
    if slot == last {
        if total <= caps[last] {
            ys[last] = total;
            f(ys);
        }
        return;
    }
    for y in 0..=caps[slot].min(total) {
        ys[slot] = y;
        enumerate_loads(caps, total - y, slot + 1, ys, f);
    }
}
