//! Approximation strategies, their variants and profiled characteristics.
//!
//! A [`Catalog`] holds, per [`Strategy`], the ordered list of variants from
//! slowest (level 0, highest quality) to fastest. Every other module refers to
//! a variant through a [`VariantKey`] (strategy + level index), which is cheap
//! to copy and totally ordered.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Serving strategy a variant belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Approximate caching: resume denoising from a cached intermediate state.
    Ac,
    /// Smaller (distilled) model variants.
    Sm,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Ac, Strategy::Sm];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ac => "ac",
            Strategy::Sm => "sm",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Handle to a variant inside a catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariantKey {
    pub strategy: Strategy,
    pub level: usize,
}

impl VariantKey {
    pub fn new(strategy: Strategy, level: usize) -> Self {
        Self { strategy, level }
    }
}

/// One value per strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerStrategy<T> {
    pub ac: T,
    pub sm: T,
}

impl<T> PerStrategy<T> {
    pub fn from_fn(mut f: impl FnMut(Strategy) -> T) -> Self {
        Self {
            ac: f(Strategy::Ac),
            sm: f(Strategy::Sm),
        }
    }
}

impl<T> std::ops::Index<Strategy> for PerStrategy<T> {
    type Output = T;
    fn index(&self, s: Strategy) -> &T {
        match s {
            Strategy::Ac => &self.ac,
            Strategy::Sm => &self.sm,
        }
    }
}

impl<T> std::ops::IndexMut<Strategy> for PerStrategy<T> {
    fn index_mut(&mut self, s: Strategy) -> &mut T {
        match s {
            Strategy::Ac => &mut self.ac,
            Strategy::Sm => &mut self.sm,
        }
    }
}

/// One point on the quality/latency spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub id: String,
    pub strategy: Strategy,
    /// 0 is the slowest, highest-quality level.
    pub level_index: usize,
    /// Model weights backing this variant. All AC variants share the base model.
    pub model: String,
    /// Denoising steps skipped (AC only, 0 for SM).
    pub k_skip: u32,
    /// Full-model latency for AC variants, own latency for SM variants.
    pub base_latency_s: f64,
    pub load_time_s: f64,
    pub avg_quality: f64,
    pub effective_latency_s: f64,
    pub peak_throughput_qpm: u32,
}

impl Variant {
    pub fn key(&self) -> VariantKey {
        VariantKey::new(self.strategy, self.level_index)
    }
}

/// Config record for a single variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub id: String,
    pub strategy: Strategy,
    pub latency_s: f64,
    pub load_time_s: f64,
    pub avg_quality: f64,
    #[serde(default)]
    pub k_skip: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    /// Total denoising steps N.
    pub n_steps: u32,
    /// Optimal-quality threshold.
    pub delta: f64,
    /// Nominal cache retrieval latency charged to every AC request.
    pub retrieval_overhead_s: f64,
    /// Model id shared by every AC variant. When an SM variant carries the
    /// same id, the two strategies share resident weights.
    pub ac_base_model: String,
    pub variants: Vec<VariantConfig>,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        let mut variants = Vec::new();
        // SM profile on A100: (id, latency, load time, avg quality).
        for (id, lat, load, q) in [
            ("sdxl", 4.2, 9.42, 20.9),
            ("sd15", 3.84, 5.56, 20.0),
            ("small", 2.75, 4.86, 18.7),
            ("tiny", 2.18, 2.91, 17.4),
        ] {
            variants.push(VariantConfig {
                id: id.to_string(),
                strategy: Strategy::Sm,
                latency_s: lat,
                load_time_s: load,
                avg_quality: q,
                k_skip: 0,
            });
        }
        for (k, q) in [(0, 20.9), (5, 20.3), (10, 19.6), (15, 18.9), (20, 18.2), (25, 17.5)] {
            variants.push(VariantConfig {
                id: format!("ac-k{k:02}"),
                strategy: Strategy::Ac,
                latency_s: 4.2,
                load_time_s: 9.42,
                avg_quality: q,
                k_skip: k,
            });
        }
        Self {
            n_steps: 50,
            delta: 0.9,
            retrieval_overhead_s: 0.05,
            ac_base_model: "sdxl".to_string(),
            variants,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("catalog has no variants")]
    Empty,
    #[error("duplicate variant id `{0}`")]
    DuplicateId(String),
    #[error("variant `{id}` has non-positive latency {latency_s}")]
    NonPositiveLatency { id: String, latency_s: f64 },
    #[error("variant `{id}` skips {k} steps but only {n} exist")]
    SkipTooLarge { id: String, k: u32, n: u32 },
    #[error("SM variant `{0}` cannot skip denoising steps")]
    SkipOnSmallModel(String),
    #[error("delta must lie in (0, 1], got {0}")]
    InvalidDelta(f64),
    #[error("retrieval overhead must be non-negative, got {0}")]
    InvalidRetrieval(f64),
    #[error("variant `{0}` is slower than one minute and has zero throughput")]
    ZeroThroughput(String),
    #[error("peak throughput of `{faster}` does not exceed that of slower `{slower}`")]
    NonMonotoneThroughput { slower: String, faster: String },
    #[error("AC quality increases with skipped steps between `{0}` and `{1}`")]
    AcQualityNotMonotone(String, String),
    #[error("quality vector is empty")]
    EmptyQuality,
    #[error("quality vector has {got} entries, strategy {strategy} has {expected} variants")]
    QualityLength { strategy: Strategy, expected: usize, got: usize },
    #[error("strategy {0} is not present in the catalog")]
    MissingStrategy(Strategy),
}

/// Immutable, validated set of variants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Catalog {
    ac: Vec<Variant>,
    sm: Vec<Variant>,
    pub n_steps: u32,
    pub delta: f64,
    pub retrieval_overhead_s: f64,
}

pub fn build_catalog(config: &CatalogConfig) -> Result<Catalog, CatalogError> {
    Catalog::build(config)
}

impl Catalog {
    pub fn build(config: &CatalogConfig) -> Result<Self, CatalogError> {
        if config.variants.is_empty() {
            return Err(CatalogError::Empty);
        }
        if !(config.delta > 0.0 && config.delta <= 1.0) {
            return Err(CatalogError::InvalidDelta(config.delta));
        }
        if !(config.retrieval_overhead_s >= 0.0) {
            return Err(CatalogError::InvalidRetrieval(config.retrieval_overhead_s));
        }
        let mut seen = BTreeSet::new();
        for v in &config.variants {
            if !seen.insert(v.id.as_str()) {
                return Err(CatalogError::DuplicateId(v.id.clone()));
            }
            if !(v.latency_s > 0.0) {
                return Err(CatalogError::NonPositiveLatency {
                    id: v.id.clone(),
                    latency_s: v.latency_s,
                });
            }
            match v.strategy {
                Strategy::Ac if v.k_skip >= config.n_steps => {
                    return Err(CatalogError::SkipTooLarge {
                        id: v.id.clone(),
                        k: v.k_skip,
                        n: config.n_steps,
                    })
                }
                Strategy::Sm if v.k_skip != 0 => {
                    return Err(CatalogError::SkipOnSmallModel(v.id.clone()))
                }
                _ => {}
            }
        }

        let mut out = Self {
            ac: Vec::new(),
            sm: Vec::new(),
            n_steps: config.n_steps,
            delta: config.delta,
            retrieval_overhead_s: config.retrieval_overhead_s,
        };
        for strategy in Strategy::ALL {
            let mut list: Vec<Variant> = config
                .variants
                .iter()
                .filter(|v| v.strategy == strategy)
                .map(|v| {
                    let effective = match strategy {
                        Strategy::Ac => ac_latency(v.latency_s, v.k_skip, config.n_steps, config.retrieval_overhead_s),
                        Strategy::Sm => v.latency_s,
                    };
                    Variant {
                        id: v.id.clone(),
                        strategy,
                        level_index: 0,
                        model: match strategy {
                            Strategy::Ac => config.ac_base_model.clone(),
                            Strategy::Sm => v.id.clone(),
                        },
                        k_skip: v.k_skip,
                        base_latency_s: v.latency_s,
                        load_time_s: v.load_time_s,
                        avg_quality: v.avg_quality,
                        effective_latency_s: effective,
                        peak_throughput_qpm: (60.0 / effective).floor() as u32,
                    }
                })
                .collect();
            // Slowest first; equal latency falls back to higher quality first.
            list.sort_by(|a, b| {
                b.effective_latency_s
                    .total_cmp(&a.effective_latency_s)
                    .then(b.avg_quality.total_cmp(&a.avg_quality))
                    .then(a.id.cmp(&b.id))
            });
            for (i, v) in list.iter_mut().enumerate() {
                v.level_index = i;
            }
            for v in &list {
                if v.peak_throughput_qpm == 0 {
                    return Err(CatalogError::ZeroThroughput(v.id.clone()));
                }
            }
            for pair in list.windows(2) {
                if pair[1].peak_throughput_qpm <= pair[0].peak_throughput_qpm {
                    return Err(CatalogError::NonMonotoneThroughput {
                        slower: pair[0].id.clone(),
                        faster: pair[1].id.clone(),
                    });
                }
                if strategy == Strategy::Ac && pair[1].avg_quality > pair[0].avg_quality {
                    return Err(CatalogError::AcQualityNotMonotone(
                        pair[0].id.clone(),
                        pair[1].id.clone(),
                    ));
                }
            }
            match strategy {
                Strategy::Ac => out.ac = list,
                Strategy::Sm => out.sm = list,
            }
        }
        Ok(out)
    }

    pub fn variants(&self, strategy: Strategy) -> &[Variant] {
        match strategy {
            Strategy::Ac => &self.ac,
            Strategy::Sm => &self.sm,
        }
    }

    pub fn has(&self, strategy: Strategy) -> bool {
        !self.variants(strategy).is_empty()
    }

    pub fn strategies(&self) -> impl Iterator<Item = Strategy> + '_ {
        Strategy::ALL.into_iter().filter(|s| self.has(*s))
    }

    /// Strategy a fresh cluster starts in: AC when available.
    pub fn default_strategy(&self) -> Strategy {
        if self.has(Strategy::Ac) {
            Strategy::Ac
        } else {
            Strategy::Sm
        }
    }

    /// Panics if the key does not belong to this catalog.
    pub fn variant(&self, key: VariantKey) -> &Variant {
        &self.variants(key.strategy)[key.level]
    }

    pub fn get(&self, key: VariantKey) -> Option<&Variant> {
        self.variants(key.strategy).get(key.level)
    }

    pub fn find(&self, id: &str) -> Option<VariantKey> {
        Strategy::ALL.into_iter().find_map(|s| {
            self.variants(s)
                .iter()
                .position(|v| v.id == id)
                .map(|level| VariantKey::new(s, level))
        })
    }

    pub fn len(&self, strategy: Strategy) -> usize {
        self.variants(strategy).len()
    }

    pub fn slowest(&self, strategy: Strategy) -> VariantKey {
        VariantKey::new(strategy, 0)
    }

    pub fn fastest(&self, strategy: Strategy) -> VariantKey {
        VariantKey::new(strategy, self.len(strategy).saturating_sub(1))
    }

    pub fn effective_latency(&self, key: VariantKey) -> f64 {
        self.variant(key).effective_latency_s
    }

    /// Largest effective latency over every variant in the catalog.
    pub fn max_effective_latency(&self) -> f64 {
        self.ac
            .iter()
            .chain(self.sm.iter())
            .map(|v| v.effective_latency_s)
            .fold(0.0, f64::max)
    }

    /// Service time of an AC variant when retrieval takes `retrieval_s`
    /// instead of the nominal overhead.
    pub fn ac_service_time(&self, key: VariantKey, retrieval_s: f64) -> f64 {
        let v = self.variant(key);
        debug_assert_eq!(v.strategy, Strategy::Ac);
        ac_latency(v.base_latency_s, v.k_skip, self.n_steps, retrieval_s)
    }

    /// Fastest variant whose quality exceeds `delta * max(q)`.
    pub fn optimal_variant(&self, strategy: Strategy, quality: &[f64]) -> Result<usize, CatalogError> {
        optimal_variant(self, strategy, quality)
    }
}

fn ac_latency(base_latency_s: f64, k_skip: u32, n_steps: u32, retrieval_s: f64) -> f64 {
    f64::from(n_steps - k_skip) / f64::from(n_steps) * base_latency_s + retrieval_s
}

/// Ground-truth affinity label of a prompt: among variants producing an
/// optimal-quality image (`q > delta * max q`), the one with the lowest
/// effective latency. `quality` is indexed by level.
pub fn optimal_variant(catalog: &Catalog, strategy: Strategy, quality: &[f64]) -> Result<usize, CatalogError> {
    if quality.is_empty() {
        return Err(CatalogError::EmptyQuality);
    }
    let variants = catalog.variants(strategy);
    if variants.is_empty() {
        return Err(CatalogError::MissingStrategy(strategy));
    }
    if quality.len() != variants.len() {
        return Err(CatalogError::QualityLength {
            strategy,
            expected: variants.len(),
            got: quality.len(),
        });
    }
    let best = quality.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = catalog.delta * best;
    let mut chosen: Option<usize> = None;
    for (level, q) in quality.iter().enumerate() {
        if *q > threshold {
            let faster = match chosen {
                None => true,
                Some(c) => variants[level].effective_latency_s < variants[c].effective_latency_s,
            };
            if faster {
                chosen = Some(level);
            }
        }
    }
    // Nothing clears the threshold when delta == 1 or scores are non-positive;
    // fall back to the fastest variant reaching the best score.
    Ok(chosen.unwrap_or_else(|| {
        quality
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }))
}
