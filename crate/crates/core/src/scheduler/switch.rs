//! AC/SM strategy switching driven by cache retrieval health.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ac,
    SwitchingToSm,
    Sm,
    SwitchingToAc,
}

impl Mode {
    /// Strategy the allocator plans for in this mode.
    pub fn strategy(self) -> Strategy {
        match self {
            Mode::Ac | Mode::SwitchingToAc => Strategy::Ac,
            Mode::Sm | Mode::SwitchingToSm => Strategy::Sm,
        }
    }

    pub fn is_switching(self) -> bool {
        matches!(self, Mode::SwitchingToSm | Mode::SwitchingToAc)
    }

    pub fn steady(strategy: Strategy) -> Self {
        match strategy {
            Strategy::Ac => Mode::Ac,
            Strategy::Sm => Mode::Sm,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Ac => "ac",
            Mode::SwitchingToSm => "switching_to_sm",
            Mode::Sm => "sm",
            Mode::SwitchingToAc => "switching_to_ac",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchConfig {
    pub enabled: bool,
    /// EMA weight of each new retrieval sample.
    pub alpha: f64,
    /// Threshold as a multiple of the nominal retrieval overhead.
    pub threshold_factor: f64,
    /// Consecutive raw samples that must exceed the threshold.
    pub persistence: usize,
    /// Retrieval health probe period while serving SM; also the bound on
    /// detection delay.
    pub probe_interval_s: f64,
    /// Load multiplier applied while switching to SM.
    pub margin: f64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 0.3,
            threshold_factor: 5.0,
            persistence: 3,
            probe_interval_s: 10.0,
            margin: 1.5,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("switch alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.threshold_factor > 1.0) {
            return Err("switch threshold must exceed the nominal retrieval overhead".into());
        }
        if self.persistence == 0 {
            return Err("switch persistence must be at least 1".into());
        }
        if !(self.probe_interval_s > 0.0) {
            return Err("probe_interval_s must be positive".into());
        }
        if !(self.margin >= 1.0) {
            return Err(format!("margin {} below 1", self.margin));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchState {
    pub mode: Mode,
    pub retrieval_ema_s: f64,
    pub nominal_s: f64,
    pub threshold_s: f64,
    pub probe_interval_s: f64,
    pub margin: f64,
    alpha: f64,
    persistence: usize,
    recent: VecDeque<f64>,
}

impl SwitchState {
    pub fn new(mode: Mode, nominal_s: f64, cfg: &SwitchConfig) -> Self {
        Self {
            mode,
            retrieval_ema_s: nominal_s,
            nominal_s,
            threshold_s: nominal_s * cfg.threshold_factor,
            probe_interval_s: cfg.probe_interval_s,
            margin: cfg.margin,
            alpha: cfg.alpha,
            persistence: cfg.persistence,
            recent: VecDeque::with_capacity(cfg.persistence),
        }
    }

    /// Folds one retrieval sample into the EMA. Returns true when retrieval
    /// is judged unhealthy: the EMA is above threshold and so were the last
    /// `persistence` raw samples.
    pub fn observe(&mut self, sample_s: f64) -> bool {
        self.retrieval_ema_s = self.alpha * sample_s + (1.0 - self.alpha) * self.retrieval_ema_s;
        if self.recent.len() == self.persistence {
            self.recent.pop_front();
        }
        self.recent.push_back(sample_s);
        self.retrieval_ema_s > self.threshold_s
            && self.recent.len() == self.persistence
            && self.recent.iter().all(|s| *s > self.threshold_s)
    }

    pub fn probe_healthy(&self, sample_s: f64) -> bool {
        sample_s <= self.threshold_s
    }

    /// Forgets retrieval history, e.g. when AC serving resumes.
    pub fn reset_monitor(&mut self) {
        self.retrieval_ema_s = self.nominal_s;
        self.recent.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_detected_after_persistence() {
        let mut s = SwitchState::new(Mode::Ac, 0.05, &SwitchConfig::default());
        for _ in 0..20 {
            assert!(!s.observe(0.05));
        }
        assert!(!s.observe(0.5));
        assert!(!s.observe(0.5));
        assert!(s.observe(0.5));
    }

    #[test]
    fn isolated_spike_ignored() {
        let mut s = SwitchState::new(Mode::Ac, 0.05, &SwitchConfig::default());
        for _ in 0..5 {
            assert!(!s.observe(2.0));
            assert!(!s.observe(0.05));
        }
    }

    #[test]
    fn probe_threshold() {
        let s = SwitchState::new(Mode::Sm, 0.05, &SwitchConfig::default());
        assert!(s.probe_healthy(0.06));
        assert!(!s.probe_healthy(0.5));
    }

    #[test]
    fn mode_strategy() {
        assert_eq!(Mode::SwitchingToSm.strategy(), Strategy::Sm);
        assert_eq!(Mode::SwitchingToAc.strategy(), Strategy::Ac);
        assert!(!Mode::Ac.is_switching());
    }

    #[test]
    fn config_validation() {
        assert!(SwitchConfig::default().validate().is_ok());
        let bad = SwitchConfig {
            margin: 0.5,
            ..SwitchConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
