use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::catalog::{Catalog, PerStrategy, Strategy, VariantKey};

/// An arriving query with its ground-truth quality per variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub id: u64,
    pub arrival_time_s: f64,
    /// Score per level, one vector per strategy present in the catalog.
    pub quality: PerStrategy<Vec<f64>>,
    pub true_optimal: PerStrategy<usize>,
    /// Filled by the classifier.
    pub predicted_optimal: Option<VariantKey>,
}

impl PromptRequest {
    pub fn quality_of(&self, key: VariantKey) -> f64 {
        self.quality[key.strategy][key.level]
    }

    /// Best score over every variant of every strategy.
    pub fn best_quality(&self) -> f64 {
        self.quality
            .ac
            .iter()
            .chain(self.quality.sm.iter())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Target distribution of true-optimal levels plus the knobs of the
/// quality-vector construction.
///
/// Every prompt draws a peak score (the level-0 score, shared by both
/// strategies since level 0 is the full model in each). For a sampled target
/// level `t`, slower levels score `peak * (1 - (1 - delta) * s * l / t)` with
/// `s ~ U(eligible_slack)`, which keeps them above `delta * peak`. Levels
/// faster than `t` start just below `delta * peak` and each drops a further
/// `g` times the catalog's relative average-quality step to that level,
/// `g ~ U(faster_drop)`, so per-level population means track the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffinityModel {
    pub ac: Vec<f64>,
    pub sm: Vec<f64>,
    pub peak_mean: f64,
    pub peak_sd: f64,
    pub eligible_slack: (f64, f64),
    pub faster_drop: (f64, f64),
}

impl Default for AffinityModel {
    fn default() -> Self {
        Self {
            ac: vec![0.15, 0.15, 0.15, 0.15, 0.15, 0.25],
            sm: vec![0.35, 0.10, 0.15, 0.40],
            peak_mean: 20.9,
            peak_sd: 1.0,
            eligible_slack: (0.3, 0.9),
            faster_drop: (0.4, 1.6),
        }
    }
}

impl AffinityModel {
    /// Defaults when the catalog matches the default level counts, uniform
    /// histograms otherwise.
    pub fn default_for(catalog: &Catalog) -> Self {
        let mut m = Self::default();
        for s in Strategy::ALL {
            let n = catalog.len(s);
            if m.histogram(s).len() != n {
                *m.histogram_mut(s) = vec![1.0 / n as f64; n];
            }
        }
        m
    }

    pub fn histogram(&self, s: Strategy) -> &[f64] {
        match s {
            Strategy::Ac => &self.ac,
            Strategy::Sm => &self.sm,
        }
    }

    pub fn histogram_mut(&mut self, s: Strategy) -> &mut Vec<f64> {
        match s {
            Strategy::Ac => &mut self.ac,
            Strategy::Sm => &mut self.sm,
        }
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<(), WorkloadError> {
        for s in catalog.strategies() {
            let h = self.histogram(s);
            if h.len() != catalog.len(s) {
                return Err(WorkloadError::InvalidAffinity(format!(
                    "{s} histogram has {} entries for {} variants",
                    h.len(),
                    catalog.len(s)
                )));
            }
            if h.iter().any(|p| !(*p >= 0.0)) {
                return Err(WorkloadError::InvalidAffinity(format!("{s} histogram has a negative entry")));
            }
            let sum: f64 = h.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(WorkloadError::InvalidAffinity(format!("{s} histogram sums to {sum}")));
            }
        }
        let (lo, hi) = self.eligible_slack;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(WorkloadError::InvalidAffinity("eligible_slack must satisfy 0 < lo <= hi < 1".into()));
        }
        let (lo, hi) = self.faster_drop;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(WorkloadError::InvalidAffinity("faster_drop must satisfy 0 < lo <= hi".into()));
        }
        if !(self.peak_mean > 0.0) || !(self.peak_sd >= 0.0) {
            return Err(WorkloadError::InvalidAffinity("peak score must be positive".into()));
        }
        Ok(())
    }
}

fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        Uniform::new(lo, hi).expect("valid range").sample(rng)
    }
}

/// `steps[l]` is `(Q[l - 1] - Q[l]) / Q[0]` from the catalog; `steps[0]` is unused.
fn quality_vector<R: Rng + ?Sized>(rng: &mut R, model: &AffinityModel, delta: f64, peak: f64, steps: &[f64], target: usize) -> Vec<f64> {
    let n = steps.len();
    let gap = 1.0 - delta;
    let slack = uniform(rng, model.eligible_slack);
    let mut ratios = Vec::with_capacity(n);
    for level in 0..=target {
        let r = if target == 0 || delta >= 1.0 {
            1.0
        } else {
            1.0 - gap * slack * level as f64 / target as f64
        };
        ratios.push(r);
    }
    let mut r = delta;
    for step in &steps[target + 1..] {
        r -= step.max(0.002) * uniform(rng, model.faster_drop);
        ratios.push(r.max(0.01));
    }
    ratios.into_iter().map(|r| peak * r).collect()
}

/// Draws a prompt whose true-optimal level per strategy follows the model's
/// target histogram. The quality vector is built so that `optimal_variant`
/// returns exactly the sampled level.
pub fn synthesize_prompt<R: Rng + ?Sized>(
    rng: &mut R,
    model: &AffinityModel,
    catalog: &Catalog,
    id: u64,
    arrival_time_s: f64,
) -> PromptRequest {
    let normal = Normal::new(model.peak_mean, model.peak_sd).expect("finite peak parameters");
    let peak = normal.sample(rng).max(model.peak_mean * 0.1);
    let mut quality = PerStrategy::<Vec<f64>>::default();
    let mut true_optimal = PerStrategy::<usize>::default();
    for s in Strategy::ALL {
        let n = catalog.len(s);
        if n == 0 {
            continue;
        }
        let target = sample_categorical(rng, model.histogram(s));
        let q: Vec<f64> = catalog.variants(s).iter().map(|v| v.avg_quality).collect();
        let steps: Vec<f64> = (0..n).map(|l| if l == 0 { 0.0 } else { (q[l - 1] - q[l]) / q[0] }).collect();
        quality[s] = quality_vector(rng, model, catalog.delta, peak, &steps, target);
        true_optimal[s] = target;
    }
    PromptRequest {
        id,
        arrival_time_s,
        quality,
        true_optimal,
        predicted_optimal: None,
    }
}
