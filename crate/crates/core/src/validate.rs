//! Oracle equivalence suites: the exact allocator against brute force, the
//! aligner against the min-cost transport oracle, and worker selection
//! against an exhaustive argmin.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::allocator::{brute_force_allocation, solve_allocation, WorkloadEstimate};
use crate::catalog::{Catalog, CatalogConfig, Strategy, Variant, VariantKey};
use crate::degradation::DegradationTable;
use crate::oda::{compute_pasm, expected_degradation, min_degradation_oracle, OdaError, Pasm};
use crate::scheduler::{select_worker, Loading, WorkerState};

/// Tolerance for row sums, pushforward and objective comparisons.
pub const TOLERANCE: f64 = 1e-9;
pub const ODA_VALIDITY_CASES: usize = 10_000;
pub const ODA_OPTIMALITY_CASES: usize = 1_000;
pub const EQ3_CASES: usize = 10_000;
/// Grid the random distributions live on, so the oracle can solve them exactly.
const GRID: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ilp,
    Oda,
    Eq3,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Ilp, Suite::Oda, Suite::Eq3];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Ilp => "ilp",
            Suite::Oda => "oda",
            Suite::Eq3 => "eq3",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown suite '{s}' (expected ilp, oda or eq3)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub failures: usize,
    pub first_counterexample: Option<String>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            cases: 0,
            failures: 0,
            first_counterexample: None,
        }
    }

    fn record(&mut self, failure: Option<String>) {
        self.cases += 1;
        if let Some(msg) = failure {
            self.failures += 1;
            self.first_counterexample.get_or_insert(msg);
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "pass" } else { "FAIL" };
        write!(f, "{:<4} {status} {}/{} cases agree", self.suite, self.cases - self.failures, self.cases)?;
        if let Some(c) = &self.first_counterexample {
            write!(f, "\n     first counterexample: {c}")?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let catalog = Catalog::build(&CatalogConfig::default()).expect("default catalog is valid");
    match suite {
        Suite::Ilp => ilp_suite(&catalog),
        Suite::Oda => {
            let mut r = oda_validity_suite(&compute_pasm, ODA_VALIDITY_CASES, seed);
            let o = oda_optimality_suite(&compute_pasm, ODA_OPTIMALITY_CASES, seed);
            r.cases += o.cases;
            r.failures += o.failures;
            r.first_counterexample = r.first_counterexample.or(o.first_counterexample);
            r
        }
        Suite::Eq3 => eq3_suite(&catalog, EQ3_CASES, seed),
    }
}

/// Every subset of 2..=4 levels of each strategy, 1..=4 workers, 0..=60 QPM.
/// Instances are split across threads; results merge in grid order.
pub fn ilp_suite(catalog: &Catalog) -> SuiteReport {
    let mut jobs: Vec<(Strategy, Vec<usize>, usize)> = Vec::new();
    for s in catalog.strategies() {
        for subset in level_subsets(catalog.len(s), 2, 4) {
            for workers in 1..=4 {
                jobs.push((s, subset.clone(), workers));
            }
        }
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let partial: Vec<Vec<Option<String>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().flat_map(|(s, subset, workers)| ilp_cases(catalog, *s, subset, *workers)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("ilp worker panicked")).collect()
    });
    let mut report = SuiteReport::new(Suite::Ilp);
    for failure in partial.into_iter().flatten() {
        report.record(failure);
    }
    report
}

fn ilp_cases(catalog: &Catalog, s: Strategy, subset: &[usize], workers: usize) -> Vec<Option<String>> {
    let all = catalog.variants(s);
    let variants: Vec<Variant> = subset.iter().map(|i| all[*i].clone()).collect();
    (0..=60u32)
        .map(|w| {
            let est = WorkloadEstimate::new(f64::from(w));
            match (solve_allocation(est, &variants, workers), brute_force_allocation(est, &variants, workers)) {
                (Ok(a), Ok(b)) if (a.objective - b.objective).abs() <= TOLERANCE && a.infeasible == b.infeasible => None,
                (a, b) => Some(format!(
                    "{s} levels {subset:?}, {workers} workers, W={w}: solver {:?} brute force {:?}",
                    a.map(|p| (p.objective, p.assignment)),
                    b.map(|p| (p.objective, p.assignment))
                )),
            }
        })
        .collect()
}

fn level_subsets(n: usize, min: usize, max: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| (min..=max).contains(&(m.count_ones() as usize)))
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// Random distribution on the `GRID` lattice with roughly a quarter of the
/// levels empty.
pub fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<u32> = (0..n).map(|_| if rng.random_bool(0.25) { 0 } else { rng.random_range(0..10) }).collect();
    if w.iter().all(|x| *x == 0) {
        w[rng.random_range(0..n)] = 1;
    }
    let total: u32 = w.iter().sum();
    let mut units: Vec<u32> = w.iter().map(|x| x * GRID / total).collect();
    let mut left = GRID - units.iter().sum::<u32>();
    let mut i = 0;
    while left > 0 {
        if w[i % n] > 0 {
            units[i % n] += 1;
            left -= 1;
        }
        i += 1;
    }
    units.iter().map(|u| f64::from(*u) / f64::from(GRID)).collect()
}

/// Strictly decreasing quality profile starting near the largest model's score.
fn random_qualities<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut q = vec![21.0];
    for _ in 1..n {
        let last = q[q.len() - 1];
        q.push(last - rng.random_range(0.05..2.0));
    }
    q
}

pub type Aligner = dyn Fn(&[f64], &[f64]) -> Result<Pasm, OdaError>;

/// Row-stochastic and pushforward-consistent on random `(H, F)` pairs with
/// 2..=8 levels.
pub fn oda_validity_suite(aligner: &Aligner, cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new(Suite::Oda);
    for _ in 0..cases {
        let n = rng.random_range(2..=8);
        let h = random_distribution(n, &mut rng);
        let f = random_distribution(n, &mut rng);
        let failure = match aligner(&h, &f) {
            Err(e) => Some(format!("H={h:?} F={f:?}: {e}")),
            Ok(p) => validity_violation(&p, &h, &f).map(|m| format!("H={h:?} F={f:?}: {m}")),
        };
        report.record(failure);
    }
    report
}

fn validity_violation(p: &Pasm, h: &[f64], f: &[f64]) -> Option<String> {
    for (i, row) in p.rows.iter().enumerate() {
        if let Some(x) = row.iter().find(|x| **x < 0.0 || !x.is_finite()) {
            return Some(format!("row {i} has entry {x}"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() >= TOLERANCE {
            return Some(format!("row {i} sums to {sum}"));
        }
    }
    let push = p.pushforward(h);
    let err = push.iter().zip(f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (err >= TOLERANCE).then(|| format!("pushforward {push:?} misses F by {err}"))
}

/// Expected degradation within `TOLERANCE` of the transport optimum, with
/// super-linear `gap^2 * dQ` tables over random quality profiles.
pub fn oda_optimality_suite(aligner: &Aligner, cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0da0_0da0);
    let mut report = SuiteReport::new(Suite::Oda);
    for _ in 0..cases {
        let n = rng.random_range(2..=8);
        let h = random_distribution(n, &mut rng);
        let f = random_distribution(n, &mut rng);
        let d = DegradationTable::from_qualities(&random_qualities(n, &mut rng));
        let failure = match (aligner(&h, &f), min_degradation_oracle(&h, &f, &d)) {
            (Ok(p), Ok(best)) => {
                let ours = expected_degradation(&p, &h, &d);
                (ours - best.degradation > TOLERANCE)
                    .then(|| format!("H={h:?} F={f:?}: degradation {ours} above optimum {}", best.degradation))
            }
            (Err(e), _) => Some(format!("H={h:?} F={f:?}: {e}")),
            (_, Err(e)) => Some(format!("H={h:?} F={f:?}: oracle failed: {e}")),
        };
        report.record(failure);
    }
    report
}

/// Argmin of `queue_len * latency` over alive workers serving `variant`,
/// lowest id among equal costs.
pub fn exhaustive_argmin(workers: &[WorkerState], variant: VariantKey, catalog: &Catalog) -> Option<usize> {
    let latency = catalog.effective_latency(variant);
    let eligible: Vec<(f64, usize)> = workers
        .iter()
        .filter(|w| w.alive && w.active == Some(variant))
        .map(|w| (w.queue_len as f64 * latency, w.id))
        .collect();
    let min = eligible.iter().map(|(c, _)| *c).reduce(f64::min)?;
    eligible.iter().filter(|(c, _)| *c == min).map(|(_, id)| *id).min()
}

fn random_worker<R: Rng + ?Sized>(id: usize, keys: &[VariantKey], catalog: &Catalog, rng: &mut R) -> WorkerState {
    let key = keys[rng.random_range(0..keys.len())];
    let mut w = WorkerState::serving(id, catalog, key);
    w.alive = rng.random_bool(0.85);
    if rng.random_bool(0.1) {
        w.active = None;
    }
    // small queues so ties are common
    w.queue_len = rng.random_range(0..6);
    w.busy_until_s = rng.random_range(0.0..100.0);
    if rng.random_bool(0.15) {
        w.loading = Some(Loading {
            variant: key,
            model: catalog.variant(key).model.clone(),
            done_at_s: w.busy_until_s + 1.0,
            blocking: rng.random_bool(0.5),
            token: 0,
        });
    }
    w
}

/// `select_worker` against [`exhaustive_argmin`] on random states, presented
/// in shuffled order so ties must resolve by id rather than position.
pub fn eq3_suite(catalog: &Catalog, cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe93);
    let mut report = SuiteReport::new(Suite::Eq3);
    let strategies: Vec<Strategy> = catalog.strategies().collect();
    for _ in 0..cases {
        let s = strategies[rng.random_range(0..strategies.len())];
        // few distinct variants so several workers share one
        let keys: Vec<VariantKey> = (0..catalog.variants(s).len().min(3)).map(|l| VariantKey::new(s, l)).collect();
        let n = rng.random_range(1..=12);
        let mut workers: Vec<WorkerState> = (0..n).map(|id| random_worker(id, &keys, catalog, &mut rng)).collect();
        workers.shuffle(&mut rng);
        let variant = keys[rng.random_range(0..keys.len())];
        let got = select_worker(&workers, variant, catalog);
        let want = exhaustive_argmin(&workers, variant, catalog);
        let failure = (got != want).then(|| {
            let state: Vec<(usize, bool, Option<VariantKey>, usize)> =
                workers.iter().map(|w| (w.id, w.alive, w.active, w.queue_len)).collect();
            format!("variant {variant:?} workers {state:?}: selected {got:?}, argmin {want:?}")
        });
        report.record(failure);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Aligner whose pulled probabilities land one level past their target.
    fn off_by_one(h: &[f64], f: &[f64]) -> Result<Pasm, OdaError> {
        let mut p = compute_pasm(h, f)?;
        let n = p.levels();
        for (s, row) in p.rows.iter_mut().enumerate() {
            for t in (s + 1..n - 1).rev() {
                if row[t] > 0.0 {
                    row[t + 1] += row[t];
                    row[t] = 0.0;
                    return Ok(p);
                }
            }
        }
        Ok(p)
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn subsets() {
        assert_eq!(level_subsets(4, 2, 4).len(), 11);
        assert_eq!(level_subsets(6, 2, 4).len(), 50);
    }

    #[test]
    fn distributions_sit_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=8 {
            let d = random_distribution(n, &mut rng);
            assert_eq!(d.len(), n);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|x| (x * f64::from(GRID)).fract().abs() < 1e-9 || (x * f64::from(GRID)).fract() > 1.0 - 1e-9));
        }
    }

    #[test]
    fn small_suites_pass() {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        assert!(oda_validity_suite(&compute_pasm, 300, 1).passed());
        assert!(oda_optimality_suite(&compute_pasm, 100, 1).passed());
        assert!(eq3_suite(&c, 1000, 1).passed());
    }

    #[test]
    fn mutant_aligner_is_caught() {
        let r = oda_validity_suite(&off_by_one, 300, 1);
        assert!(!r.passed());
        let msg = r.first_counterexample.unwrap();
        assert!(msg.contains("pushforward"), "{msg}");
        assert!(format!("{}", oda_validity_suite(&off_by_one, 50, 2)).contains("first counterexample"));
    }

    #[test]
    fn argmin_oracle_basics() {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let key = VariantKey::new(Strategy::Sm, 0);
        let mut ws: Vec<WorkerState> = (0..3).map(|i| WorkerState::serving(i, &c, key)).collect();
        ws[0].queue_len = 2;
        ws.reverse();
        assert_eq!(exhaustive_argmin(&ws, key, &c), Some(1));
        assert_eq!(exhaustive_argmin(&ws, VariantKey::new(Strategy::Sm, 1), &c), None);
    }
}
