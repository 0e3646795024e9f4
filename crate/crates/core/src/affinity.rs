//! Optimal-variant prediction and the affinity histogram `H(v)`.
//!
//! The classifier is modeled as an oracle that returns the prompt's true
//! optimal level with probability `accuracy` and otherwise draws a substitute
//! from a miss kernel centred on the true level.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Strategy, VariantKey};
use crate::workload::PromptRequest;

pub const DEFAULT_WINDOW: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum AffinityError {
    #[error("classifier accuracy {0} outside [0, 1]")]
    Accuracy(f64),
    #[error("miss kernel row {row} sums to {sum}")]
    KernelRow { row: usize, sum: f64 },
    #[error("miss kernel has {got} rows, expected {expected}")]
    KernelShape { expected: usize, got: usize },
}

/// Where a misprediction lands, relative to the true optimal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissKernel {
    /// Uniform over the levels one slower and one faster (whichever exist).
    Adjacent,
    /// Uniform over every other level.
    Uniform,
    /// Always one level faster, clamped at the fastest level.
    OneFaster,
    /// Explicit row-stochastic matrix `[true][predicted]`.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierOracle {
    pub accuracy: f64,
    pub kernel: MissKernel,
}

impl Default for ClassifierOracle {
    fn default() -> Self {
        Self {
            accuracy: 1.0,
            kernel: MissKernel::Adjacent,
        }
    }
}

impl ClassifierOracle {
    pub fn new(accuracy: f64, kernel: MissKernel) -> Result<Self, AffinityError> {
        let oracle = Self { accuracy, kernel };
        oracle.validate(None)?;
        Ok(oracle)
    }

    pub fn validate(&self, levels: Option<usize>) -> Result<(), AffinityError> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(AffinityError::Accuracy(self.accuracy));
        }
        if let MissKernel::Matrix(rows) = &self.kernel {
            if let Some(n) = levels {
                if rows.len() != n {
                    return Err(AffinityError::KernelShape { expected: n, got: rows.len() });
                }
            }
            for (row, r) in rows.iter().enumerate() {
                let sum: f64 = r.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || r.iter().any(|p| *p < 0.0) {
                    return Err(AffinityError::KernelRow { row, sum });
                }
            }
        }
        Ok(())
    }

    /// Predicted optimal level among `levels` variants for a prompt whose true
    /// optimal level is `truth`.
    pub fn predict_level<R: Rng + ?Sized>(&self, truth: usize, levels: usize, rng: &mut R) -> usize {
        if levels <= 1 || rng.random::<f64>() < self.accuracy {
            return truth;
        }
        match &self.kernel {
            MissKernel::OneFaster => (truth + 1).min(levels - 1),
            MissKernel::Adjacent => {
                let below = truth.checked_sub(1);
                let above = (truth + 1 < levels).then_some(truth + 1);
                match (below, above) {
                    (Some(b), Some(a)) => {
                        if rng.random::<bool>() {
                            b
                        } else {
                            a
                        }
                    }
                    (Some(b), None) => b,
                    (None, Some(a)) => a,
                    (None, None) => truth,
                }
            }
            MissKernel::Uniform => {
                let pick = rng.random_range(0..levels - 1);
                if pick >= truth {
                    pick + 1
                } else {
                    pick
                }
            }
            MissKernel::Matrix(rows) => {
                let row = &rows[truth];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                row.iter().rposition(|p| *p > 0.0).unwrap_or(truth)
            }
        }
    }

    /// Predicts for the prompt under `strategy` and stores the result in
    /// `predicted_optimal`.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        prompt: &mut PromptRequest,
        strategy: Strategy,
        levels: usize,
        rng: &mut R,
    ) -> VariantKey {
        let level = self.predict_level(prompt.true_optimal[strategy], levels, rng);
        let key = VariantKey::new(strategy, level);
        prompt.predicted_optimal = Some(key);
        key
    }
}

/// Normalized distribution of predicted optimal levels.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityHistogram {
    pub probs: Vec<f64>,
    pub window_size: usize,
    /// Set when the window was empty and `probs` is the uniform fallback.
    pub uniform_fallback: bool,
}

impl AffinityHistogram {
    pub fn uniform(levels: usize) -> Self {
        Self {
            probs: vec![1.0 / levels as f64; levels],
            window_size: 0,
            uniform_fallback: true,
        }
    }
}

/// Normalizes level counts from a window of predictions.
pub fn estimate_histogram(window: &[usize], levels: usize) -> AffinityHistogram {
    if window.is_empty() {
        return AffinityHistogram::uniform(levels);
    }
    let mut counts = vec![0usize; levels];
    for &l in window {
        counts[l] += 1;
    }
    AffinityHistogram {
        probs: counts.iter().map(|c| *c as f64 / window.len() as f64).collect(),
        window_size: window.len(),
        uniform_fallback: false,
    }
}

/// Sliding window over the last `capacity` predictions with running counts.
#[derive(Debug, Clone)]
pub struct HistogramWindow {
    capacity: usize,
    ring: VecDeque<usize>,
    counts: Vec<usize>,
}

impl HistogramWindow {
    pub fn new(levels: usize, capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            ring: VecDeque::with_capacity(capacity.max(1)),
            counts: vec![0; levels],
        }
    }

    pub fn push(&mut self, level: usize) {
        if self.ring.len() == self.capacity {
            if let Some(old) = self.ring.pop_front() {
                self.counts[old] -= 1;
            }
        }
        self.ring.push_back(level);
        self.counts[level] += 1;
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn snapshot(&self) -> AffinityHistogram {
        let n = self.ring.len();
        if n == 0 {
            return AffinityHistogram::uniform(self.counts.len());
        }
        AffinityHistogram {
            probs: self.counts.iter().map(|c| *c as f64 / n as f64).collect(),
            window_size: n,
            uniform_fallback: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::catalog::{Catalog, CatalogConfig};
    use crate::workload::{synthesize_prompt, AffinityModel};

    #[test]
    fn perfect_oracle() {
        let o = ClassifierOracle::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for truth in 0..4 {
            for _ in 0..100 {
                assert_eq!(o.predict_level(truth, 4, &mut rng), truth);
            }
        }
    }

    #[test]
    fn deterministic_miss_is_clamped() {
        let o = ClassifierOracle::new(0.0, MissKernel::OneFaster).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(o.predict_level(1, 4, &mut rng), 2);
        assert_eq!(o.predict_level(3, 4, &mut rng), 3);
    }

    #[test]
    fn adjacent_misses_stay_adjacent() {
        let o = ClassifierOracle::new(0.0, MissKernel::Adjacent).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = o.predict_level(2, 6, &mut rng);
            assert!(p == 1 || p == 3);
            assert_eq!(o.predict_level(0, 6, &mut rng), 1);
            assert_eq!(o.predict_level(5, 6, &mut rng), 4);
        }
        let u = ClassifierOracle::new(0.0, MissKernel::Uniform).unwrap();
        for _ in 0..200 {
            let p = u.predict_level(2, 4, &mut rng);
            assert!(p != 2 && p < 4);
        }
    }

    #[test]
    fn accuracy_concentration() {
        let catalog = Catalog::build(&CatalogConfig::default()).unwrap();
        let model = AffinityModel::default();
        let o = ClassifierOracle::new(0.8, MissKernel::Adjacent).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut hits = 0;
        for i in 0..n {
            let mut p = synthesize_prompt(&mut rng, &model, &catalog, i, 0.0);
            let k = o.predict(&mut p, Strategy::Sm, 4, &mut rng);
            assert_eq!(p.predicted_optimal, Some(k));
            if k.level == p.true_optimal.sm {
                hits += 1;
            }
        }
        let rate = hits as f64 / n as f64;
        assert!((0.78..=0.82).contains(&rate), "{rate}");
    }

    #[test]
    fn kernel_validation() {
        assert_eq!(ClassifierOracle::new(1.5, MissKernel::Adjacent).unwrap_err(), AffinityError::Accuracy(1.5));
        let bad = MissKernel::Matrix(vec![vec![0.5, 0.4], vec![0.0, 1.0]]);
        assert!(matches!(ClassifierOracle::new(0.5, bad), Err(AffinityError::KernelRow { row: 0, .. })));
    }

    #[test]
    fn histogram_normalization() {
        let h = estimate_histogram(&vec![0; 1000], 4);
        assert_eq!(h.probs, vec![1.0, 0.0, 0.0, 0.0]);
        let mut w = vec![0; 500];
        w.extend(vec![3; 500]);
        assert_eq!(estimate_histogram(&w, 4).probs, vec![0.5, 0.0, 0.0, 0.5]);
        let empty = estimate_histogram(&[], 4);
        assert!(empty.uniform_fallback);
        assert_eq!(empty.probs, vec![0.25; 4]);
    }

    #[test]
    fn ring_buffer_matches_batch_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ring = HistogramWindow::new(5, 100);
        let mut all = Vec::new();
        for _ in 0..1234 {
            let l = rng.random_range(0..5);
            ring.push(l);
            all.push(l);
        }
        let tail = &all[all.len() - 100..];
        assert_eq!(ring.snapshot(), estimate_histogram(tail, 5));
        assert_eq!(ring.len(), 100);
        let sum: f64 = ring.snapshot().probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
