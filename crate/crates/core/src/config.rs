//! Experiment definitions loaded from TOML.
//!
//! ```toml
//! name = "ramp"
//! seeds = [1, 2]
//! policy = "quality-aware"
//! policies = ["quality-aware", "prompt-agnostic"]
//!
//! [workload]
//! kind = "ramp"
//! start_qpm = 50.0
//! end_qpm = 600.0
//! duration_min = 110
//!
//! [sim]
//! workers = 8
//!
//! [[faults]]
//! kind = "gpu_down"
//! start_s = 600.0
//! end_s = 1200.0
//! workers = [0, 1, 2, 3]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogConfig, CatalogError};
use crate::sim::{Fault, FaultScript, Policy, SimConfig, SimError};
use crate::workload::{gen_bursty, gen_piecewise, gen_poisson, gen_ramp, load_trace, ArrivalTrace, WorkloadError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Where arrivals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    /// Trace file; relative paths resolve against the config file.
    Trace { path: PathBuf },
    Poisson { qpm: f64, duration_min: f64 },
    Ramp { start_qpm: f64, end_qpm: f64, duration_min: u32 },
    Bursty { low_qpm: f64, high_qpm: f64, period_min: f64, duty: f64, duration_min: f64 },
    /// `(duration_min, qpm)` segments.
    Piecewise { segments: Vec<(f64, f64)> },
}

impl WorkloadSpec {
    pub fn build(&self, seed: u64, base_dir: &Path) -> Result<ArrivalTrace, WorkloadError> {
        match self {
            WorkloadSpec::Trace { path } => load_trace(&base_dir.join(path)),
            WorkloadSpec::Poisson { qpm, duration_min } => gen_poisson(*qpm, *duration_min, seed),
            WorkloadSpec::Ramp { start_qpm, end_qpm, duration_min } => gen_ramp(*start_qpm, *end_qpm, *duration_min, seed),
            WorkloadSpec::Bursty { low_qpm, high_qpm, period_min, duty, duration_min } => {
                gen_bursty(*low_qpm, *high_qpm, *period_min, *duty, *duration_min, seed)
            }
            WorkloadSpec::Piecewise { segments } => gen_piecewise(segments, seed),
        }
    }
}

fn default_name() -> String {
    "run".to_string()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_policy() -> Policy {
    Policy::QualityAware
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    /// Policies for `compare`.
    #[serde(default)]
    pub policies: Vec<Policy>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub catalog: CatalogConfig,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Directory relative workload paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn new(workload: WorkloadSpec) -> Self {
        Self {
            name: default_name(),
            seeds: default_seeds(),
            policy: default_policy(),
            policies: Vec::new(),
            output_dir: None,
            catalog: CatalogConfig::default(),
            workload,
            sim: SimConfig::default(),
            faults: Vec::new(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn fault_script(&self) -> FaultScript {
        FaultScript::new(self.faults.clone())
    }

    /// Builds the catalog and checks every section.
    pub fn validate(&self) -> Result<Catalog, ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        let catalog = Catalog::build(&self.catalog)?;
        self.sim.validate(&catalog)?;
        self.fault_script().validate(self.sim.workers)?;
        Ok(catalog)
    }

    pub fn trace(&self, seed: u64) -> Result<ArrivalTrace, WorkloadError> {
        self.workload.build(seed, &self.base_dir)
    }
}
