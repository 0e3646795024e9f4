use std::collections::HashSet;

use proptest::prelude::*;
use qaserve::catalog::{Catalog, CatalogConfig};
use qaserve::sim::{run, FaultScript, Policy, RunOutput, SimConfig};
use qaserve::workload::{gen_piecewise, ArrivalTrace};

fn policy() -> impl Strategy<Value = Policy> {
    prop::sample::select(Policy::ALL.to_vec())
}

fn faults(workers: usize) -> impl Strategy<Value = FaultScript> {
    (0usize..3, 0.0f64..900.0, 30.0f64..600.0, prop::collection::vec(0..workers, 1..=workers), 1.0f64..12.0).prop_map(
        |(kind, start, len, down, mult)| match kind {
            0 => FaultScript::default(),
            1 => FaultScript::gpu_down(start, start + len, down),
            _ => FaultScript::retrieval_degraded(start, start + len, mult),
        },
    )
}

fn trace() -> impl Strategy<Value = (ArrivalTrace, u64)> {
    (prop::collection::vec((1.0f64..6.0, 0.0f64..300.0), 1..4), any::<u64>())
        .prop_map(|(segments, seed)| (gen_piecewise(&segments, seed).unwrap(), seed))
}

fn check(out: &RunOutput, trace: &ArrivalTrace) -> Result<(), TestCaseError> {
    prop_assert_eq!(out.completions.len() + out.unfinished, trace.len());
    prop_assert_eq!(out.unfinished, 0);
    let ids: HashSet<u64> = out.completions.iter().map(|c| c.prompt_id).collect();
    prop_assert_eq!(ids.len(), out.completions.len(), "a prompt completed twice");
    for c in &out.completions {
        prop_assert_eq!(c.arrival_time_s, trace.arrivals[c.prompt_id as usize]);
        prop_assert!(c.arrival_time_s <= c.start_service_s, "{:?}", c);
        prop_assert!(c.start_service_s < c.finish_s, "{:?}", c);
        prop_assert!(c.quality <= c.best_quality);
    }
    // batch size one: service intervals on a worker never overlap
    let mut by_worker: Vec<Vec<(f64, f64)>> = vec![Vec::new(); out.usage.busy.len()];
    for c in &out.completions {
        by_worker[c.worker].push((c.start_service_s, c.finish_s));
    }
    for spans in &mut by_worker {
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in spans.windows(2) {
            prop_assert!(w[0].1 <= w[1].0 + 1e-9, "overlap {:?}", w);
        }
    }
    for row in out.report.rows() {
        prop_assert!((0.0..=1.0).contains(&row.slo_violation_ratio));
        prop_assert!((0.0..=100.0 + 1e-9).contains(&row.utilization_pct), "{:?}", row);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_prompt_finishes_once_in_causal_order(
        (trace, seed) in trace(),
        policy in policy(),
        workers in 1usize..6,
        faults in faults(5),
    ) {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let cfg = SimConfig { workers, ..SimConfig::default() };
        let faults = FaultScript::new(faults.faults.into_iter().filter(|f| match &f.kind {
            qaserve::sim::FaultKind::GpuDown { workers: w } => w.iter().all(|x| *x < workers),
            _ => true,
        }).collect());
        let out = run(&c, &cfg, &trace, &faults, policy, seed).unwrap();
        check(&out, &trace)?;
    }

    #[test]
    fn runs_are_reproducible((trace, seed) in trace(), policy in policy()) {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let cfg = SimConfig::default();
        let a = run(&c, &cfg, &trace, &FaultScript::default(), policy, seed).unwrap();
        let b = run(&c, &cfg, &trace, &FaultScript::default(), policy, seed).unwrap();
        prop_assert_eq!(a.completions, b.completions);
        prop_assert_eq!(a.report, b.report);
    }
}

#[test]
fn idle_worker_never_leaves_queue_waiting() {
    // work conservation on a single worker: each prompt starts at its arrival
    // or at the previous finish, whichever is later
    let c = Catalog::build(&CatalogConfig::default()).unwrap();
    let trace = gen_piecewise(&[(10.0, 30.0)], 4).unwrap();
    let cfg = SimConfig { workers: 1, ..SimConfig::default() };
    let out = run(&c, &cfg, &trace, &FaultScript::default(), Policy::StaticSlowest, 4).unwrap();
    let mut done: Vec<_> = out.completions.clone();
    done.sort_by(|a, b| a.start_service_s.total_cmp(&b.start_service_s));
    let mut prev_finish = 0.0f64;
    for r in &done {
        let expected = r.arrival_time_s.max(prev_finish);
        assert!((r.start_service_s - expected).abs() < 1e-9, "{r:?} expected start {expected}");
        prev_finish = r.finish_s;
    }
}
