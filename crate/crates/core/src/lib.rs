//! Saturation-throughput models and design algorithms for a multi-channel
//! cognitive-radio MAC combining semi-distributed cooperative spectrum
//! sensing with p-persistent CSMA access.
//!
//! SUs sense assigned channel subsets with energy detectors, exchange
//! one-bit results (optionally over error-prone links), fuse them with an
//! a-out-of-b rule, and contend for perceived-idle channels with
//! p-persistent CSMA under RTS/CTS. The crate provides:
//!
//! - exact normalized-throughput evaluation with and without reporting
//!   errors ([`throughput_exact`], [`throughput_reporting`]);
//! - joint optimization of sensing times, fusion thresholds, and the
//!   access probability ([`optimize`]);
//! - channel sensing-set search: greedy and exhaustive, seeded by a
//!   Hungarian assignment ([`assign`]);
//! - a seeded cycle-level Monte Carlo simulator that serves as an
//!   independent oracle for the analytic models ([`simulate`]).
//!
//! All evaluation is deterministic; simulator results are reproducible
//! across thread counts for a fixed seed.

pub mod assign;
pub mod contention;
pub mod error;
pub mod optimize;
pub mod scenario;
pub mod sensing;
pub mod simulate;
pub mod throughput_exact;
pub mod throughput_reporting;
pub mod types;

pub use assign::{
    brute_force_assignment, greedy_assignment, hungarian_min_cost, AssignmentSearchResult,
    SearchMethod, SearchStep,
};
pub use contention::{frame_durations, FrameDurations};
pub use error::{Error, Result};
pub use optimize::{
    equalize_detection, optimize_params, optimize_params_with_rule, DetectionEqualization,
    FusionRule, OptimizerSettings,
};
pub use scenario::{
    load_scenario_path, load_scenario_str, LoadOverrides, ScenarioConfig, ScenarioFile,
    TimingParams, DEFAULT_PD_TARGET,
};
pub use simulate::{simulate, SimResult, SimSettings};
pub use throughput_exact::{normalized_throughput_ne, AccessContext};
pub use throughput_reporting::{normalized_throughput_re, ReceiverView};
pub use types::{
    ErrorModel, SensingAccessParams, SensingAssignment, ThroughputReport, TracePoint,
};
