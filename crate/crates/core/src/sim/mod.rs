//! Deterministic discrete-event simulation of a serving cluster: arrivals,
//! per-worker FIFO service at batch size one, model loads, retrieval latency,
//! resolve ticks, failures and baseline policies.

mod event;
mod fault;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{AffinityError, ClassifierOracle, MissKernel};
use crate::catalog::{Catalog, PerStrategy, Strategy, VariantKey};
use crate::metrics::{finalize, MetricsReport, Usage};
use crate::scheduler::{LoadRequest, Mode, Placement, ResolveOutcome, ResolveRecord, Scheduler, SchedulerConfig, SchedulerError};
use crate::workload::{synthesize_prompt, AffinityModel, ArrivalTrace, PromptRequest, WorkloadError};

pub use crate::metrics::CompletionRecord;
pub use event::{Event, EventKind, EventQueue};
pub use fault::{Fault, FaultKind, FaultScript};

const STREAM_PROMPTS: u64 = 1;
const STREAM_CLASSIFIER: u64 = 2;
const STREAM_ROUTING: u64 = 3;
const STREAM_RETRIEVAL: u64 = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid fault script: {0}")]
    Fault(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("policy {0} needs {1} variants in the catalog")]
    Unsupported(Policy, Strategy),
}

/// Serving policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Classifier, aligner and load-adaptive allocation.
    QualityAware,
    /// Load-adaptive allocation, prompts routed at random per `F`.
    PromptAgnostic,
    /// Every worker on the slowest variant.
    StaticSlowest,
    /// Every worker on the fastest variant.
    StaticFastest,
    /// Full model everywhere, per-prompt skip level, round-robin spread.
    UniformLargestAc,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::QualityAware,
        Policy::PromptAgnostic,
        Policy::StaticSlowest,
        Policy::StaticFastest,
        Policy::UniformLargestAc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::QualityAware => "quality-aware",
            Policy::PromptAgnostic => "prompt-agnostic",
            Policy::StaticSlowest => "static-slowest",
            Policy::StaticFastest => "static-fastest",
            Policy::UniformLargestAc => "uniform-largest-ac",
        }
    }

    /// Whether the policy re-solves the allocation periodically.
    pub fn adaptive(self) -> bool {
        matches!(self, Policy::QualityAware | Policy::PromptAgnostic)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy {s:?}, expected one of {}", Policy::ALL.map(Policy::as_str).join(", ")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub workers: usize,
    pub classifier: ClassifierOracle,
    /// Prompt affinity model; defaults to the catalog's default histograms.
    pub affinity: Option<AffinityModel>,
    pub scheduler: SchedulerConfig,
    /// Retrieval latency is the nominal overhead times a factor drawn
    /// uniformly from this range.
    pub retrieval_jitter: (f64, f64),
    /// Stop processing events after this time instead of draining.
    pub horizon_s: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            classifier: ClassifierOracle::default(),
            affinity: None,
            scheduler: SchedulerConfig::default(),
            retrieval_jitter: (0.8, 1.2),
            horizon_s: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), SimError> {
        if self.workers == 0 {
            return Err(SimError::Config("workers must be at least 1".into()));
        }
        let (lo, hi) = self.retrieval_jitter;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SimError::Config(format!("retrieval_jitter ({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        if let Some(h) = self.horizon_s {
            if !(h >= 0.0) {
                return Err(SimError::Config(format!("horizon_s {h} is negative")));
            }
        }
        self.scheduler.validate()?;
        self.classifier.validate(None)?;
        if matches!(self.classifier.kernel, MissKernel::Matrix(_)) {
            for s in catalog.strategies() {
                self.classifier.validate(Some(catalog.len(s)))?;
            }
        }
        if let Some(m) = &self.affinity {
            m.validate(catalog)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub time_s: f64,
    pub from: Mode,
    pub to: Mode,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub policy: Policy,
    pub seed: u64,
    pub report: MetricsReport,
    pub completions: Vec<CompletionRecord>,
    pub resolves: Vec<ResolveRecord>,
    pub switches: Vec<SwitchEvent>,
    pub usage: Usage,
    pub arrivals: usize,
    /// Prompts still waiting or in service when the run stopped.
    pub unfinished: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    prompt: usize,
    variant: VariantKey,
}

#[derive(Debug, Clone, Copy)]
struct InService {
    prompt: usize,
    variant: VariantKey,
    start_s: f64,
    retrieval_s: f64,
    token: u64,
}

#[derive(Debug, Default)]
struct WorkerRuntime {
    queue: VecDeque<Queued>,
    in_service: Option<InService>,
    token: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    trace: &'a ArrivalTrace,
    faults: &'a FaultScript,
    policy: Policy,
    model: AffinityModel,
    sched: Scheduler,
    static_key: Option<VariantKey>,
    events: EventQueue,
    now: f64,
    prompts: Vec<PromptRequest>,
    predicted: Vec<PerStrategy<usize>>,
    runtime: Vec<WorkerRuntime>,
    pending: VecDeque<usize>,
    completions: Vec<CompletionRecord>,
    usage: Usage,
    alive_since: Vec<Option<f64>>,
    prompt_rng: ChaCha8Rng,
    classifier_rng: ChaCha8Rng,
    routing_rng: ChaCha8Rng,
    retrieval_rng: ChaCha8Rng,
    next_arrival: usize,
    multipliers: Vec<f64>,
    fault_started: Vec<bool>,
    faults_outstanding: usize,
    down_count: Vec<u32>,
    resolves: Vec<ResolveRecord>,
    switches: Vec<SwitchEvent>,
    last_mode: Mode,
    probe_pending: bool,
    round_robin: usize,
}

/// Runs `policy` over `trace` with `faults` injected. Identical inputs and
/// seed give identical output.
pub fn run(
    catalog: &Catalog,
    cfg: &SimConfig,
    trace: &ArrivalTrace,
    faults: &FaultScript,
    policy: Policy,
    seed: u64,
) -> Result<RunOutput, SimError> {
    cfg.validate(catalog)?;
    faults.validate(cfg.workers)?;
    let mut sim = Sim::new(catalog, cfg, trace, faults, policy, seed)?;
    sim.run_loop();
    Ok(sim.finish(seed))
}

impl<'a> Sim<'a> {
    fn new(
        catalog: &Catalog,
        cfg: &'a SimConfig,
        trace: &'a ArrivalTrace,
        faults: &'a FaultScript,
        policy: Policy,
        seed: u64,
    ) -> Result<Self, SimError> {
        let n = cfg.workers;
        let static_strategy = if catalog.has(Strategy::Sm) { Strategy::Sm } else { Strategy::Ac };
        let (start, pin) = match policy {
            Policy::QualityAware | Policy::PromptAgnostic => (catalog.default_strategy(), None),
            Policy::StaticSlowest => (static_strategy, Some(catalog.slowest(static_strategy))),
            Policy::StaticFastest => (static_strategy, Some(catalog.fastest(static_strategy))),
            Policy::UniformLargestAc => {
                if !catalog.has(Strategy::Ac) {
                    return Err(SimError::Unsupported(policy, Strategy::Ac));
                }
                (Strategy::Ac, Some(catalog.slowest(Strategy::Ac)))
            }
        };
        let mut sched_cfg = cfg.scheduler.clone();
        if !policy.adaptive() {
            sched_cfg.switch.enabled = false;
        }
        let mut sched = Scheduler::new(catalog.clone(), n, sched_cfg, start)?;
        if let Some(key) = pin {
            sched.pin_all(key);
        }
        let model = cfg.affinity.clone().unwrap_or_else(|| AffinityModel::default_for(catalog));
        model.validate(catalog)?;

        let mut events = EventQueue::default();
        if !trace.is_empty() {
            events.push(trace.arrivals[0], EventKind::Arrival(0));
        }
        for (i, f) in faults.faults.iter().enumerate() {
            events.push(f.start_s, EventKind::FailureStart(i));
            events.push(f.end_s, EventKind::FailureEnd(i));
        }
        if policy.adaptive() {
            events.push(0.0, EventKind::ResolveTick);
        }
        let last_mode = sched.mode();
        Ok(Self {
            cfg,
            trace,
            faults,
            policy,
            model,
            static_key: if policy.adaptive() || policy == Policy::UniformLargestAc { None } else { pin },
            sched,
            events,
            now: 0.0,
            prompts: Vec::with_capacity(trace.len()),
            predicted: Vec::with_capacity(trace.len()),
            runtime: (0..n).map(|_| WorkerRuntime::default()).collect(),
            pending: VecDeque::new(),
            completions: Vec::with_capacity(trace.len()),
            usage: Usage {
                busy: vec![Vec::new(); n],
                alive: vec![Vec::new(); n],
            },
            alive_since: vec![Some(0.0); n],
            prompt_rng: stream(seed, STREAM_PROMPTS),
            classifier_rng: stream(seed, STREAM_CLASSIFIER),
            routing_rng: stream(seed, STREAM_ROUTING),
            retrieval_rng: stream(seed, STREAM_RETRIEVAL),
            next_arrival: 0,
            multipliers: vec![1.0; faults.faults.len()],
            fault_started: vec![false; faults.faults.len()],
            faults_outstanding: faults.faults.len(),
            down_count: vec![0; n],
            resolves: Vec::new(),
            switches: Vec::new(),
            last_mode,
            probe_pending: false,
            round_robin: 0,
        })
    }

    fn run_loop(&mut self) {
        while let Some(e) = self.events.pop() {
            if self.cfg.horizon_s.is_some_and(|h| e.time_s > h) {
                break;
            }
            self.now = e.time_s;
            match e.kind {
                EventKind::Arrival(i) => self.on_arrival(i),
                EventKind::ServiceComplete { worker, token } => self.on_service_complete(worker, token),
                EventKind::LoadComplete { worker, token } => {
                    if self.sched.on_load_complete(worker, token) {
                        self.try_start(worker);
                        self.flush_pending();
                    }
                }
                EventKind::ResolveTick => self.on_resolve_tick(),
                EventKind::Probe => self.on_probe(),
                EventKind::FailureStart(i) => self.on_failure_start(i),
                EventKind::FailureEnd(i) => self.on_failure_end(i),
            }
            self.track_mode();
        }
    }

    fn catalog(&self) -> &Catalog {
        self.sched.catalog()
    }

    fn backlog(&self) -> bool {
        !self.pending.is_empty() || self.runtime.iter().any(|r| r.in_service.is_some() || !r.queue.is_empty())
    }

    fn work_remaining(&self) -> bool {
        let work = self.next_arrival < self.trace.len() || self.backlog();
        let servable = self.sched.workers.iter().any(|w| w.alive) || self.faults_outstanding > 0;
        work && servable
    }

    fn track_mode(&mut self) {
        let mode = self.sched.mode();
        if mode == self.last_mode {
            return;
        }
        self.switches.push(SwitchEvent {
            time_s: self.now,
            from: self.last_mode,
            to: mode,
        });
        self.last_mode = mode;
        if mode == Mode::Sm && !self.probe_pending && self.sched.switching_enabled() {
            self.probe_pending = true;
            self.events.push(self.now + self.sched.switch.probe_interval_s, EventKind::Probe);
        }
    }

    fn retrieval_multiplier(&self) -> f64 {
        self.multipliers.iter().product()
    }

    fn sample_retrieval(&mut self) -> f64 {
        let (lo, hi) = self.cfg.retrieval_jitter;
        let jitter = if lo == hi { lo } else { self.retrieval_rng.random_range(lo..hi) };
        self.catalog().retrieval_overhead_s * self.retrieval_multiplier() * jitter
    }

    fn sync(&mut self, w: usize) {
        let rt = &self.runtime[w];
        self.sched.workers[w].queue_len = rt.queue.len() + usize::from(rt.in_service.is_some());
    }

    fn on_arrival(&mut self, i: usize) {
        let t = self.trace.arrivals[i];
        self.next_arrival = i + 1;
        if i + 1 < self.trace.len() {
            self.events.push(self.trace.arrivals[i + 1], EventKind::Arrival(i + 1));
        }
        let prompt = synthesize_prompt(&mut self.prompt_rng, &self.model, self.sched.catalog(), i as u64, t);
        let mut predicted = PerStrategy::<usize>::default();
        for s in Strategy::ALL {
            let levels = self.sched.catalog().len(s);
            if levels > 0 {
                predicted[s] = self.cfg.classifier.predict_level(prompt.true_optimal[s], levels, &mut self.classifier_rng);
                self.sched.record_prediction(s, predicted[s]);
            }
        }
        self.prompts.push(prompt);
        self.predicted.push(predicted);
        self.dispatch(i);
    }

    fn route(&mut self, idx: usize) -> Option<Placement> {
        let predicted = self.predicted[idx];
        match self.policy {
            Policy::QualityAware => self.sched.schedule_prompt(&predicted, &mut self.routing_rng),
            Policy::PromptAgnostic => self.sched.schedule_by_load(&predicted, &mut self.routing_rng),
            Policy::StaticSlowest | Policy::StaticFastest => {
                self.sched.schedule_fixed(self.static_key.expect("static policy pins a variant"), &predicted)
            }
            Policy::UniformLargestAc => {
                let n = self.sched.workers.len();
                let worker = (0..n)
                    .map(|k| (self.round_robin + k) % n)
                    .find(|&w| self.sched.workers[w].alive)?;
                self.round_robin = (worker + 1) % n;
                Some(Placement {
                    worker,
                    variant: VariantKey::new(Strategy::Ac, predicted.ac),
                })
            }
        }
    }

    /// Routes a prompt to a worker queue, or parks it when no worker is alive.
    fn dispatch(&mut self, idx: usize) {
        match self.route(idx) {
            Some(p) => {
                let s = p.variant.strategy;
                self.prompts[idx].predicted_optimal = Some(VariantKey::new(s, self.predicted[idx][s]));
                self.runtime[p.worker].queue.push_back(Queued {
                    prompt: idx,
                    variant: p.variant,
                });
                self.sync(p.worker);
                self.try_start(p.worker);
            }
            None => self.pending.push_back(idx),
        }
    }

    fn flush_pending(&mut self) {
        if self.pending.is_empty() || !self.sched.workers.iter().any(|w| w.alive) {
            return;
        }
        let parked: Vec<usize> = self.pending.drain(..).collect();
        for idx in parked {
            self.dispatch(idx);
        }
    }

    fn try_start(&mut self, w: usize) {
        let rt = &self.runtime[w];
        if rt.in_service.is_some() || rt.queue.is_empty() || !self.sched.workers[w].can_serve() {
            return;
        }
        let q = self.runtime[w].queue.pop_front().expect("checked non-empty");
        let served = if self.policy == Policy::UniformLargestAc {
            q.variant
        } else {
            self.sched.workers[w].active.expect("can_serve implies active")
        };
        let (service, retrieval) = match served.strategy {
            Strategy::Ac => {
                let r = self.sample_retrieval();
                (self.catalog().ac_service_time(served, r), r)
            }
            Strategy::Sm => (self.catalog().effective_latency(served), 0.0),
        };
        let rt = &mut self.runtime[w];
        rt.token += 1;
        rt.in_service = Some(InService {
            prompt: q.prompt,
            variant: served,
            start_s: self.now,
            retrieval_s: retrieval,
            token: rt.token,
        });
        let finish = self.now + service;
        self.events.push(finish, EventKind::ServiceComplete { worker: w, token: rt.token });
        self.usage.busy[w].push((self.now, finish));
        self.sched.workers[w].busy_until_s = finish;
        self.sync(w);
        if served.strategy == Strategy::Ac && self.policy.adaptive() {
            if let Some(out) = self.sched.observe_retrieval(self.now, retrieval, &self.trace.arrivals) {
                self.apply_outcome(out);
            }
        }
    }

    fn on_service_complete(&mut self, w: usize, token: u64) {
        let Some(s) = self.runtime[w].in_service.take_if(|s| s.token == token) else {
            return;
        };
        let p = &self.prompts[s.prompt];
        self.completions.push(CompletionRecord {
            prompt_id: p.id,
            arrival_time_s: p.arrival_time_s,
            start_service_s: s.start_s,
            finish_s: self.now,
            served_variant: s.variant,
            worker: w,
            quality: p.quality_of(s.variant),
            best_quality: p.best_quality(),
            retrieval_overhead_s: s.retrieval_s,
        });
        self.sync(w);
        self.try_start(w);
    }

    fn push_loads(&mut self, loads: &[LoadRequest]) {
        for l in loads {
            self.events.push(
                l.done_at_s,
                EventKind::LoadComplete {
                    worker: l.worker,
                    token: l.token,
                },
            );
        }
    }

    fn apply_outcome(&mut self, out: ResolveOutcome) {
        self.push_loads(&out.loads);
        self.resolves.push(out.record);
        if self.sched.config.reroute_queued {
            self.reroute_waiting();
        }
        for w in 0..self.runtime.len() {
            self.try_start(w);
        }
        self.flush_pending();
    }

    fn reroute_waiting(&mut self) {
        let mut waiting: Vec<usize> = Vec::new();
        for w in 0..self.runtime.len() {
            waiting.extend(self.runtime[w].queue.drain(..).map(|q| q.prompt));
            self.sync(w);
        }
        waiting.sort_unstable();
        for idx in waiting {
            self.dispatch(idx);
        }
    }

    fn on_resolve_tick(&mut self) {
        let out = self.sched.resolve_tick(self.now, &self.trace.arrivals);
        self.apply_outcome(out);
        if self.work_remaining() {
            self.events.push(self.now + self.sched.config.resolve_interval_s, EventKind::ResolveTick);
        }
    }

    fn on_probe(&mut self) {
        self.probe_pending = false;
        if self.sched.mode() != Mode::Sm {
            return;
        }
        let sample = self.sample_retrieval();
        if let Some(out) = self.sched.on_probe(self.now, sample, &self.trace.arrivals) {
            self.apply_outcome(out);
        }
        if self.sched.mode() == Mode::Sm && self.work_remaining() {
            self.probe_pending = true;
            self.events.push(self.now + self.sched.switch.probe_interval_s, EventKind::Probe);
        }
    }

    fn on_failure_start(&mut self, i: usize) {
        self.fault_started[i] = true;
        match &self.faults.faults[i].kind {
            FaultKind::GpuDown { workers } => {
                for &w in workers {
                    self.down_count[w] += 1;
                    if self.down_count[w] == 1 {
                        self.fail_worker(w);
                    }
                }
                self.flush_pending();
            }
            FaultKind::RetrievalDegraded { multiplier } => self.multipliers[i] = *multiplier,
        }
    }

    fn fail_worker(&mut self, w: usize) {
        log::info!("t={:.1}: worker {w} down", self.now);
        let rt = &mut self.runtime[w];
        rt.token += 1;
        let mut moved: Vec<usize> = Vec::new();
        if let Some(s) = rt.in_service.take() {
            moved.push(s.prompt);
            if let Some(last) = self.usage.busy[w].last_mut() {
                last.1 = self.now;
            }
        }
        moved.extend(rt.queue.drain(..).map(|q| q.prompt));
        for idx in moved.into_iter().rev() {
            self.pending.push_front(idx);
        }
        if let Some(since) = self.alive_since[w].take() {
            self.usage.alive[w].push((since, self.now));
        }
        self.sched.fail_worker(w);
        self.sched.workers[w].busy_until_s = self.now;
    }

    fn on_failure_end(&mut self, i: usize) {
        if !self.fault_started[i] {
            log::warn!("fault {i} ended without starting, ignored");
            return;
        }
        self.faults_outstanding = self.faults_outstanding.saturating_sub(1);
        match &self.faults.faults[i].kind {
            FaultKind::GpuDown { workers } => {
                for &w in workers {
                    self.down_count[w] = self.down_count[w].saturating_sub(1);
                    if self.down_count[w] == 0 && !self.sched.workers[w].alive {
                        log::info!("t={:.1}: worker {w} back", self.now);
                        self.alive_since[w] = Some(self.now);
                        if let Some(req) = self.sched.revive_worker(w, self.now) {
                            self.push_loads(&[req]);
                        }
                    }
                }
                self.flush_pending();
            }
            FaultKind::RetrievalDegraded { .. } => self.multipliers[i] = 1.0,
        }
    }

    fn finish(mut self, seed: u64) -> RunOutput {
        let last_finish = self.completions.iter().map(|c| c.finish_s).fold(0.0, f64::max);
        let end = self.cfg.horizon_s.unwrap_or(self.trace.duration_s.max(last_finish));
        for (w, since) in self.alive_since.iter().enumerate() {
            if let Some(s) = since {
                if end > *s {
                    self.usage.alive[w].push((*s, end));
                }
            }
        }
        let unfinished = self.pending.len()
            + self
                .runtime
                .iter()
                .map(|r| r.queue.len() + usize::from(r.in_service.is_some()))
                .sum::<usize>();
        let report = finalize(&self.completions, &self.usage, self.sched.catalog(), end);
        RunOutput {
            policy: self.policy,
            seed,
            report,
            completions: self.completions,
            resolves: self.resolves,
            switches: self.switches,
            usage: self.usage,
            arrivals: self.trace.len(),
            unfinished,
            duration_s: end,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogConfig, VariantConfig};

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

    fn cfg(workers: usize) -> SimConfig {
        SimConfig {
            workers,
            ..SimConfig::default()
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.as_str().parse::<Policy>().unwrap(), p);
        }
        assert!("argus".parse::<Policy>().is_err());
    }

    #[test]
    fn empty_trace() {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let trace = ArrivalTrace::new("empty", vec![], 120.0);
        let out = run(&c, &cfg(2), &trace, &FaultScript::default(), Policy::QualityAware, 1).unwrap();
        assert_eq!(out.report.completions, 0);
        assert_eq!(out.report.aggregate.throughput_qpm, 0.0);
        assert_eq!(out.report.violations, 0);
        assert_eq!(out.report.per_minute.len(), 2);
    }

    #[test]
    fn fifo_single_worker() {
        let c = one_variant();
        let trace = ArrivalTrace::new("burst", vec![0.0; 10], 0.0);
        for policy in [Policy::QualityAware, Policy::StaticSlowest] {
            let out = run(&c, &cfg(1), &trace, &FaultScript::default(), policy, 0).unwrap();
            let finishes: Vec<f64> = out.completions.iter().map(|c| c.finish_s).collect();
            for (k, f) in finishes.iter().enumerate() {
                assert!((f - 4.2 * (k + 1) as f64).abs() < 1e-9, "{finishes:?}");
            }
            assert_eq!(out.report.violations, 7);
            assert!((out.report.aggregate.slo_violation_ratio - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn failure_requeues_in_flight() {
        let c = one_variant();
        let trace = ArrivalTrace::new("burst", vec![0.0, 0.0], 0.0);
        let faults = FaultScript::gpu_down(1.0, 20.0, vec![0]);
        let out = run(&c, &cfg(2), &trace, &faults, Policy::StaticSlowest, 0).unwrap();
        assert_eq!(out.completions.len(), 2);
        // prompt 0 restarted on worker 1 after prompt 1
        let p0 = out.completions.iter().find(|c| c.prompt_id == 0).unwrap();
        assert_eq!(p0.worker, 1);
        assert!((p0.finish_s - 8.4).abs() < 1e-9);
        assert_eq!(out.unfinished, 0);
    }

    #[test]
    fn all_workers_down_parks_prompts() {
        let c = one_variant();
        let trace = ArrivalTrace::new("t", vec![5.0], 0.0);
        let faults = FaultScript::gpu_down(1.0, 20.0, vec![0]);
        let out = run(&c, &cfg(1), &trace, &faults, Policy::StaticSlowest, 0).unwrap();
        let done = &out.completions[0];
        // reload of the model after the outage, then service
        assert!((done.start_service_s - (20.0 + 9.42)).abs() < 1e-9);
    }

    #[test]
    fn unsupported_policy() {
        let c = one_variant();
        let trace = ArrivalTrace::new("t", vec![1.0], 0.0);
        let err = run(&c, &cfg(1), &trace, &FaultScript::default(), Policy::UniformLargestAc, 0).unwrap_err();
        assert!(matches!(err, SimError::Unsupported(_, Strategy::Ac)));
    }

    #[test]
    fn horizon_leaves_unfinished() {
        let c = one_variant();
        let trace = ArrivalTrace::new("burst", vec![0.0; 10], 0.0);
        let cfg = SimConfig {
            horizon_s: Some(10.0),
            ..cfg(1)
        };
        let out = run(&c, &cfg, &trace, &FaultScript::default(), Policy::StaticSlowest, 0).unwrap();
        assert_eq!(out.completions.len() + out.unfinished, 10);
        assert_eq!(out.completions.len(), 2);
    }
}
