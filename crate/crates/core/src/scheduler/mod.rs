//! Online control plane: per-prompt routing, the periodic resolve tick and
//! AC/SM strategy switching.

mod switch;
mod worker;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::HistogramWindow;
use crate::allocator::{estimate_workload, solve_allocation, AllocationPlan, WorkloadEstimate, WorkloadEstimator};
use crate::catalog::{Catalog, PerStrategy, Strategy, VariantKey};
use crate::oda::{compute_pasm, route_sample, Pasm};

pub use switch::{Mode, SwitchConfig, SwitchState};
pub use worker::{routing_cost, select_worker, Loading, WorkerState, MAX_RESIDENT_MODELS};

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("invalid scheduler config: {0}")]
    Config(String),
}

/// Order in which other levels are tried when no worker serves the assigned one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackOrder {
    SlowerFirst,
    FasterFirst,
}

impl FallbackOrder {
    /// Levels other than `level`, nearest first, in the preferred direction.
    pub fn candidates(self, level: usize, levels: usize) -> Vec<usize> {
        let slower = (0..level).rev();
        let faster = level + 1..levels;
        match self {
            FallbackOrder::SlowerFirst => slower.chain(faster).collect(),
            FallbackOrder::FasterFirst => faster.chain(slower).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub resolve_interval_s: f64,
    /// Look-back for the arrival-rate estimate.
    pub workload_window_s: f64,
    /// Optional EMA weight on successive load estimates.
    pub workload_smoothing: Option<f64>,
    pub histogram_window: usize,
    pub fallback: FallbackOrder,
    /// Re-route waiting prompts after every resolve instead of leaving them
    /// on their worker.
    pub reroute_queued: bool,
    /// Add the outstanding backlog, spread over one resolve interval, to the
    /// load estimate.
    pub drain_backlog: bool,
    /// Multiplier on the load estimate reserving capacity against queueing.
    pub headroom: f64,
    pub switch: SwitchConfig,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            resolve_interval_s: 60.0,
            workload_window_s: 60.0,
            workload_smoothing: None,
            histogram_window: crate::affinity::DEFAULT_WINDOW,
            fallback: FallbackOrder::SlowerFirst,
            reroute_queued: false,
            drain_backlog: true,
            headroom: 1.0,
            switch: SwitchConfig::default(),
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(self.resolve_interval_s > 0.0) {
            return Err(SchedulerError::Config("resolve_interval_s must be positive".into()));
        }
        if !(self.workload_window_s > 0.0) {
            return Err(SchedulerError::Config("workload_window_s must be positive".into()));
        }
        if let Some(a) = self.workload_smoothing {
            if !(a > 0.0 && a <= 1.0) {
                return Err(SchedulerError::Config(format!("workload_smoothing {a} outside (0, 1]")));
            }
        }
        if !(self.headroom >= 1.0 && self.headroom.is_finite()) {
            return Err(SchedulerError::Config(format!("headroom {} below 1", self.headroom)));
        }
        if self.histogram_window == 0 {
            return Err(SchedulerError::Config("histogram_window must be positive".into()));
        }
        self.switch.validate().map_err(SchedulerError::Config)
    }
}

/// A model load the simulator must complete at `done_at_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadRequest {
    pub worker: usize,
    pub done_at_s: f64,
    pub token: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolveRecord {
    pub time_s: f64,
    pub epoch: u64,
    pub mode: Mode,
    pub strategy: Strategy,
    /// Load estimate handed to the solver, margin included.
    pub w_t_qpm: f64,
    pub alive_workers: usize,
    pub histogram: Vec<f64>,
    pub plan: Option<AllocationPlan>,
    #[serde(skip)]
    pub pasm: Option<Pasm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolveOutcome {
    pub record: ResolveRecord,
    pub loads: Vec<LoadRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub worker: usize,
    pub variant: VariantKey,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    catalog: Catalog,
    pub workers: Vec<WorkerState>,
    pub switch: SwitchState,
    windows: PerStrategy<HistogramWindow>,
    estimator: WorkloadEstimator,
    pub plan: Option<AllocationPlan>,
    pub pasm: Pasm,
    epoch: u64,
    next_token: u64,
}

impl Scheduler {
    /// Every worker starts serving the slowest level of `strategy`.
    pub fn new(
        catalog: Catalog,
        n_workers: usize,
        config: SchedulerConfig,
        strategy: Strategy,
    ) -> Result<Self, SchedulerError> {
        if n_workers == 0 {
            return Err(SchedulerError::NoWorkers);
        }
        config.validate()?;
        if !catalog.has(strategy) {
            return Err(SchedulerError::Config(format!("catalog has no {strategy} variants")));
        }
        let start = catalog.slowest(strategy);
        let workers = (0..n_workers).map(|id| WorkerState::serving(id, &catalog, start)).collect();
        let windows = PerStrategy::from_fn(|s| HistogramWindow::new(catalog.len(s), config.histogram_window));
        let switch = SwitchState::new(Mode::steady(strategy), catalog.retrieval_overhead_s, &config.switch);
        Ok(Self {
            estimator: WorkloadEstimator::new(config.workload_smoothing),
            pasm: Pasm::identity(catalog.len(strategy)),
            config,
            catalog,
            workers,
            switch,
            windows,
            plan: None,
            epoch: 0,
            next_token: 0,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn mode(&self) -> Mode {
        self.switch.mode
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Whether AC/SM switching can happen at all.
    pub fn switching_enabled(&self) -> bool {
        self.config.switch.enabled && self.catalog.has(Strategy::Ac) && self.catalog.has(Strategy::Sm)
    }

    pub fn record_prediction(&mut self, strategy: Strategy, level: usize) {
        if self.catalog.has(strategy) {
            self.windows[strategy].push(level);
        }
    }

    pub fn histogram(&self, strategy: Strategy) -> Vec<f64> {
        self.windows[strategy].snapshot().probs
    }

    fn token(&mut self) -> u64 {
        self.next_token += 1;
        self.next_token
    }

    /// Re-estimates load, re-solves the allocation over alive workers,
    /// rebuilds the PASM and re-targets workers.
    pub fn resolve_tick(&mut self, now: f64, arrivals: &[f64]) -> ResolveOutcome {
        let mode = self.switch.mode;
        let strategy = mode.strategy();
        let raw = estimate_workload(arrivals, now, self.config.workload_window_s);
        let mut w_t = self.estimator.observe(raw.w_t_qpm).scaled(self.config.headroom);
        if self.config.drain_backlog {
            let backlog: usize = self.workers.iter().filter(|w| w.alive).map(|w| w.queue_len).sum();
            w_t = WorkloadEstimate::new(w_t.w_t_qpm + backlog as f64 * 60.0 / self.config.resolve_interval_s);
        }
        if mode == Mode::SwitchingToSm {
            w_t = w_t.scaled(self.switch.margin);
        }
        let alive = self.workers.iter().filter(|w| w.alive).count();
        let histogram = self.histogram(strategy);
        self.epoch += 1;
        let mut record = ResolveRecord {
            time_s: now,
            epoch: self.epoch,
            mode,
            strategy,
            w_t_qpm: w_t.w_t_qpm,
            alive_workers: alive,
            histogram,
            plan: None,
            pasm: None,
        };
        if alive == 0 {
            return ResolveOutcome { record, loads: Vec::new() };
        }
        let plan = solve_allocation(w_t, self.catalog.variants(strategy), alive).expect("catalog and workers non-empty");
        let mut pasm = compute_pasm(&record.histogram, &plan.f_dist).unwrap_or_else(|e| {
            log::warn!("aligner failed ({e}), routing without shifts");
            Pasm::identity(plan.f_dist.len())
        });
        pasm.epoch = self.epoch;
        if pasm.extended_scan {
            log::warn!("epoch {}: aligner could not cover a deficit from slower levels", self.epoch);
        }
        let loads = self.apply_plan(&plan, now);
        self.settle_mode();
        self.plan = Some(plan.clone());
        self.pasm = pasm.clone();
        record.plan = Some(plan);
        record.pasm = Some(pasm);
        ResolveOutcome { record, loads }
    }

    /// Maps plan slots onto alive workers keeping as many workers as possible
    /// on their current target, then on a resident or loading model.
    fn apply_plan(&mut self, plan: &AllocationPlan, now: f64) -> Vec<LoadRequest> {
        let strategy = plan.strategy;
        let mut need = plan.counts();
        let mut chosen: Vec<Option<usize>> = vec![None; self.workers.len()];
        for w in self.workers.iter().filter(|w| w.alive) {
            if let Some(t) = w.target {
                if t.strategy == strategy && need[t.level] > 0 {
                    need[t.level] -= 1;
                    chosen[w.id] = Some(t.level);
                }
            }
        }
        for w in self.workers.iter().filter(|w| w.alive) {
            if chosen[w.id].is_some() {
                continue;
            }
            let fits = (0..need.len()).find(|&l| {
                let model = &self.catalog.variants(strategy)[l].model;
                need[l] > 0 && (w.has_model(model) || w.loading.as_ref().is_some_and(|x| &x.model == model))
            });
            if let Some(l) = fits {
                need[l] -= 1;
                chosen[w.id] = Some(l);
            }
        }
        for w in self.workers.iter().filter(|w| w.alive) {
            if chosen[w.id].is_none() {
                let l = need.iter().position(|n| *n > 0).expect("plan slots match alive workers");
                need[l] -= 1;
                chosen[w.id] = Some(l);
            }
        }
        let mut loads = Vec::new();
        for (id, level) in chosen.into_iter().enumerate() {
            if let Some(level) = level {
                if let Some(req) = self.set_target(id, VariantKey::new(strategy, level), now) {
                    loads.push(req);
                }
            }
        }
        loads
    }

    /// Points worker `id` at `key`, re-keying instantly when the model is
    /// resident and starting a load otherwise.
    fn set_target(&mut self, id: usize, key: VariantKey, now: f64) -> Option<LoadRequest> {
        let switching = self.switch.mode.is_switching();
        let model = self.catalog.variant(key).model.clone();
        let load_time = self.catalog.variant(key).load_time_s;
        let token = self.token();
        let w = &mut self.workers[id];
        w.target = Some(key);
        let blocked = w.loading.as_ref().is_some_and(|l| l.blocking);
        if w.has_model(&model) && !blocked {
            w.active = Some(key);
            w.loading = None;
            if !switching {
                w.loaded.retain(|m| *m == model);
            }
            return None;
        }
        if let Some(l) = w.loading.as_mut() {
            if l.model == model {
                l.variant = key;
                return None;
            }
        }
        if switching && w.active.is_some() {
            // background load next to the model being served
            let keep = w.active.map(|a| self.catalog.variant(a).model.clone());
            w.loaded.retain(|m| Some(m) == keep.as_ref());
            let done_at_s = now + load_time;
            w.loading = Some(Loading {
                variant: key,
                model,
                done_at_s,
                blocking: false,
                token,
            });
            return Some(LoadRequest { worker: id, done_at_s, token });
        }
        let done_at_s = now.max(w.busy_until_s) + load_time;
        w.loaded.clear();
        w.active = None;
        w.loading = Some(Loading {
            variant: key,
            model,
            done_at_s,
            blocking: true,
            token,
        });
        Some(LoadRequest { worker: id, done_at_s, token })
    }

    /// Finishes a load. Returns false for stale or cancelled loads.
    pub fn on_load_complete(&mut self, worker: usize, token: u64) -> bool {
        let w = &mut self.workers[worker];
        let Some(l) = w.loading.take_if(|l| l.token == token) else {
            return false;
        };
        if !w.alive {
            return false;
        }
        w.loaded = vec![l.model];
        w.active = Some(l.variant);
        if self.switch.mode == Mode::SwitchingToSm && l.variant.strategy == Strategy::Sm {
            self.switch.mode = Mode::Sm;
        }
        self.settle_mode();
        true
    }

    /// Leaves a switching mode once no alive worker is still loading.
    fn settle_mode(&mut self) {
        if self.switch.mode.is_switching() && !self.workers.iter().any(|w| w.alive && w.loading.is_some()) {
            self.switch.mode = Mode::steady(self.switch.mode.strategy());
        }
    }

    /// Retrieval latency of an AC request. Triggers the switch to SM when
    /// retrieval is judged unhealthy.
    pub fn observe_retrieval(&mut self, now: f64, sample_s: f64, arrivals: &[f64]) -> Option<ResolveOutcome> {
        if self.switch.mode != Mode::Ac || !self.switching_enabled() {
            return None;
        }
        if !self.switch.observe(sample_s) {
            return None;
        }
        log::info!("t={now:.1}: retrieval ema {:.3}s, switching to SM", self.switch.retrieval_ema_s);
        self.switch.mode = Mode::SwitchingToSm;
        // the full model is shared, so it keeps serving without the cache
        let full = self.catalog.slowest(Strategy::Sm);
        let full_model = self.catalog.variant(full).model.clone();
        for w in self.workers.iter_mut().filter(|w| w.alive) {
            if w.has_model(&full_model) && !w.loading.as_ref().is_some_and(|l| l.blocking) {
                w.active = Some(full);
                w.target = Some(full);
                w.loading = None;
            }
        }
        Some(self.resolve_tick(now, arrivals))
    }

    /// Periodic retrieval probe while serving SM. A healthy probe starts
    /// the switch back to AC.
    pub fn on_probe(&mut self, now: f64, sample_s: f64, arrivals: &[f64]) -> Option<ResolveOutcome> {
        if self.switch.mode != Mode::Sm || !self.switching_enabled() || !self.switch.probe_healthy(sample_s) {
            return None;
        }
        log::info!("t={now:.1}: retrieval probe healthy, switching to AC");
        self.switch.mode = Mode::SwitchingToAc;
        self.switch.reset_monitor();
        Some(self.resolve_tick(now, arrivals))
    }

    /// Marks a worker failed; its models are lost.
    pub fn fail_worker(&mut self, id: usize) {
        let w = &mut self.workers[id];
        w.alive = false;
        w.active = None;
        w.loaded.clear();
        w.loading = None;
        w.queue_len = 0;
        self.settle_mode();
    }

    /// Brings a failed worker back; it reloads the model of its last target.
    pub fn revive_worker(&mut self, id: usize, now: f64) -> Option<LoadRequest> {
        if self.workers[id].alive {
            return None;
        }
        let strategy = self.switch.mode.strategy();
        let key = match self.workers[id].target {
            Some(t) if t.strategy == strategy => t,
            _ => self.catalog.slowest(strategy),
        };
        let load_time = self.catalog.variant(key).load_time_s;
        let model = self.catalog.variant(key).model.clone();
        let token = self.token();
        let w = &mut self.workers[id];
        w.alive = true;
        w.target = Some(key);
        w.busy_until_s = now;
        let done_at_s = now + load_time;
        w.loading = Some(Loading {
            variant: key,
            model,
            done_at_s,
            blocking: true,
            token,
        });
        Some(LoadRequest { worker: id, done_at_s, token })
    }

    /// Worker serving `key`, falling back to other levels of the same
    /// strategy in the configured order.
    pub fn place(&self, key: VariantKey) -> Option<Placement> {
        if let Some(worker) = select_worker(&self.workers, key, &self.catalog) {
            return Some(Placement { worker, variant: key });
        }
        let levels = self.catalog.len(key.strategy);
        for level in self.config.fallback.candidates(key.level, levels) {
            let alt = VariantKey::new(key.strategy, level);
            if let Some(worker) = select_worker(&self.workers, alt, &self.catalog) {
                log::debug!("no worker serves {}, fell back to {}", self.catalog.variant(key).id, self.catalog.variant(alt).id);
                return Some(Placement { worker, variant: alt });
            }
        }
        None
    }

    /// Last resort while every worker is loading: the alive worker with the
    /// shortest queue, at its target.
    fn any_worker(&self) -> Option<Placement> {
        self.workers
            .iter()
            .filter(|w| w.alive && w.target.is_some())
            .min_by_key(|w| (w.queue_len, w.id))
            .map(|w| Placement {
                worker: w.id,
                variant: w.target.expect("filtered"),
            })
    }

    fn place_with_fallbacks(&self, key: VariantKey, predicted: &PerStrategy<usize>) -> Option<Placement> {
        self.place(key)
            .or_else(|| {
                let other = match key.strategy {
                    Strategy::Ac => Strategy::Sm,
                    Strategy::Sm => Strategy::Ac,
                };
                if self.catalog.has(other) {
                    self.place(VariantKey::new(other, predicted[other].min(self.catalog.len(other) - 1)))
                } else {
                    None
                }
            })
            .or_else(|| self.any_worker())
    }

    /// Routes a prompt through the PASM row of its predicted optimal level,
    /// then to a worker. `None` only when no worker is alive.
    pub fn schedule_prompt<R: Rng + ?Sized>(&self, predicted: &PerStrategy<usize>, rng: &mut R) -> Option<Placement> {
        let strategy = self.switch.mode.strategy();
        let p = predicted[strategy];
        let level = route_sample(&self.pasm, p, rng).unwrap_or(p);
        self.place_with_fallbacks(VariantKey::new(strategy, level), predicted)
    }

    /// Routes ignoring the prompt: a level drawn from the plan's load
    /// distribution.
    pub fn schedule_by_load<R: Rng + ?Sized>(&self, predicted: &PerStrategy<usize>, rng: &mut R) -> Option<Placement> {
        let strategy = self.switch.mode.strategy();
        let level = match &self.plan {
            Some(plan) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                plan.f_dist
                    .iter()
                    .position(|p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or_else(|| plan.f_dist.iter().rposition(|p| *p > 0.0).unwrap_or(0))
            }
            None => 0,
        };
        self.place_with_fallbacks(VariantKey::new(strategy, level), predicted)
    }

    /// Routes to a fixed variant.
    pub fn schedule_fixed(&self, key: VariantKey, predicted: &PerStrategy<usize>) -> Option<Placement> {
        self.place_with_fallbacks(key, predicted)
    }

    /// Pins every worker to `key` with no loads. Used by static policies.
    pub fn pin_all(&mut self, key: VariantKey) {
        let model = self.catalog.variant(key).model.clone();
        for w in &mut self.workers {
            w.active = Some(key);
            w.target = Some(key);
            w.loaded = vec![model.clone()];
            w.loading = None;
        }
        self.switch.mode = Mode::steady(key.strategy);
    }
}
