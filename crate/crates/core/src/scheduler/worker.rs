use serde::Serialize;

use crate::catalog::{Catalog, VariantKey};

/// Models a GPU may hold at once while switching strategies.
pub const MAX_RESIDENT_MODELS: usize = 2;

/// A model load in progress.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Loading {
    pub variant: VariantKey,
    pub model: String,
    pub done_at_s: f64,
    /// A blocking load evicted the previous model and the worker cannot
    /// serve until it completes. A co-resident load runs in the background.
    pub blocking: bool,
    /// Identifies the matching completion event.
    pub token: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerState {
    pub id: usize,
    pub alive: bool,
    /// Model ids resident in GPU memory.
    pub loaded: Vec<String>,
    /// Variant currently being served, if any.
    pub active: Option<VariantKey>,
    /// Variant the current plan assigned to this worker.
    pub target: Option<VariantKey>,
    /// Prompts waiting or in service at this worker.
    pub queue_len: usize,
    pub busy_until_s: f64,
    pub loading: Option<Loading>,
}

impl WorkerState {
    /// Fresh worker with `key`'s model resident and active.
    pub fn serving(id: usize, catalog: &Catalog, key: VariantKey) -> Self {
        Self {
            id,
            alive: true,
            loaded: vec![catalog.variant(key).model.clone()],
            active: Some(key),
            target: Some(key),
            queue_len: 0,
            busy_until_s: 0.0,
            loading: None,
        }
    }

    pub fn has_model(&self, model: &str) -> bool {
        self.loaded.iter().any(|m| m == model)
    }

    /// Whether the worker can pick up work now.
    pub fn can_serve(&self) -> bool {
        self.alive && self.active.is_some() && !self.loading.as_ref().is_some_and(|l| l.blocking)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.loaded.len() > MAX_RESIDENT_MODELS {
            return Err(format!("worker {} holds {} models", self.id, self.loaded.len()));
        }
        if let Some(l) = &self.loading {
            if !l.blocking && self.loaded.len() >= MAX_RESIDENT_MODELS {
                return Err(format!("worker {} has no room for a co-resident load", self.id));
            }
        }
        Ok(())
    }
}

/// Routing cost of sending one more prompt to `w`: outstanding requests
/// times the variant's processing time.
pub fn routing_cost(w: &WorkerState, latency_s: f64) -> f64 {
    w.queue_len as f64 * latency_s
}

/// Among alive workers actively serving `variant`, the one minimizing
/// `queue_len * latency`, ties to the lowest id.
pub fn select_worker(workers: &[WorkerState], variant: VariantKey, catalog: &Catalog) -> Option<usize> {
    let latency = catalog.effective_latency(variant);
    let mut best: Option<(f64, usize)> = None;
    for w in workers {
        if !(w.alive && w.active == Some(variant)) {
            continue;
        }
        let cost = routing_cost(w, latency);
        let better = match best {
            None => true,
            Some((c, id)) => cost < c || (cost == c && w.id < id),
        };
        if better {
            best = Some((cost, w.id));
        }
    }
    best.map(|(_, id)| id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogConfig, Strategy};

    fn setup(queues: &[usize]) -> (Catalog, Vec<WorkerState>) {
        let c = Catalog::build(&CatalogConfig::default()).unwrap();
        let key = VariantKey::new(Strategy::Sm, 1);
        let ws = queues
            .iter()
            .enumerate()
            .map(|(i, q)| WorkerState {
                queue_len: *q,
                ..WorkerState::serving(i, &c, key)
            })
            .collect();
        (c, ws)
    }

    #[test]
    fn shortest_queue_wins() {
        let (c, ws) = setup(&[2, 3]);
        assert_eq!(select_worker(&ws, VariantKey::new(Strategy::Sm, 1), &c), Some(0));
        let (c, ws) = setup(&[4, 1, 1]);
        assert_eq!(select_worker(&ws, VariantKey::new(Strategy::Sm, 1), &c), Some(1));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let (c, ws) = setup(&[0, 0]);
        assert_eq!(select_worker(&ws, VariantKey::new(Strategy::Sm, 1), &c), Some(0));
    }

    #[test]
    fn ineligible_workers_skipped() {
        let (c, mut ws) = setup(&[0, 5, 7]);
        ws[0].alive = false;
        assert_eq!(select_worker(&ws, VariantKey::new(Strategy::Sm, 1), &c), Some(1));
        ws[1].active = Some(VariantKey::new(Strategy::Sm, 0));
        assert_eq!(select_worker(&ws, VariantKey::new(Strategy::Sm, 1), &c), Some(2));
        assert_eq!(select_worker(&ws, VariantKey::new(Strategy::Ac, 1), &c), None);
    }
}
