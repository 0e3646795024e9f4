//! Quality-aware approximation scaling for text-to-image serving clusters.
//!
//! The crate is organised along the control path of a serving cluster:
//!
//! * [`catalog`]: approximation strategies, variants and their profiles.
//! * [`workload`]: arrival traces, load generators and synthetic prompts.
//! * [`affinity`]: the optimal-variant classifier oracle and histogram `H(v)`.
//! * [`allocator`]: exact worker/variant allocation producing `F(v)`.
//! * [`oda`]: the distribution aligner that redistributes `H` onto `F`.
//! * [`scheduler`]: per-prompt routing, periodic re-solve, strategy switching.
//! * [`sim`]: deterministic discrete-event cluster simulator and baselines.
//! * [`metrics`]: per-minute and aggregate serving metrics, CSV export.
//! * [`validate`]: oracle equivalence suites for the allocator, aligner and router.

pub mod affinity;
pub mod allocator;
pub mod catalog;
pub mod config;
pub mod degradation;
pub mod metrics;
pub mod oda;
pub mod scheduler;
pub mod sim;
pub mod validate;
pub mod workload;
