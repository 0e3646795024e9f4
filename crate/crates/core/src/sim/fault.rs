use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    GpuDown { workers: Vec<usize> },
    /// Multiplies the cache retrieval latency of AC requests.
    RetrievalDegraded { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub start_s: f64,
    pub end_s: f64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultScript {
    #[serde(default)]
    pub faults: Vec<Fault>,
}

impl FaultScript {
    pub fn new(faults: Vec<Fault>) -> Self {
        Self { faults }
    }

    pub fn gpu_down(start_s: f64, end_s: f64, workers: Vec<usize>) -> Self {
        Self::new(vec![Fault {
            start_s,
            end_s,
            kind: FaultKind::GpuDown { workers },
        }])
    }

    pub fn retrieval_degraded(start_s: f64, end_s: f64, multiplier: f64) -> Self {
        Self::new(vec![Fault {
            start_s,
            end_s,
            kind: FaultKind::RetrievalDegraded { multiplier },
        }])
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    pub fn validate(&self, n_workers: usize) -> Result<(), SimError> {
        for (i, f) in self.faults.iter().enumerate() {
            if !(f.start_s >= 0.0 && f.start_s < f.end_s) {
                return Err(SimError::Fault(format!("fault {i}: need 0 <= start < end, got {} .. {}", f.start_s, f.end_s)));
            }
            match &f.kind {
                FaultKind::GpuDown { workers } => {
                    if workers.is_empty() {
                        return Err(SimError::Fault(format!("fault {i}: no workers listed")));
                    }
                    if let Some(w) = workers.iter().find(|w| **w >= n_workers) {
                        return Err(SimError::Fault(format!("fault {i}: worker {w} out of range")));
                    }
                }
                FaultKind::RetrievalDegraded { multiplier } => {
                    if !(*multiplier > 0.0 && multiplier.is_finite()) {
                        return Err(SimError::Fault(format!("fault {i}: multiplier {multiplier} must be positive")));
                    }
                }
            }
        }
        Ok(())
    }
}
