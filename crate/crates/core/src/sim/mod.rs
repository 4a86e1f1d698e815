//! Deterministic fault-injecting simulator of synchronous training.

pub mod metrics;
pub mod profile;
pub mod runner;
pub mod scenario;
pub mod step;
pub mod thermal;

pub use metrics::{emit_metrics, MetricsModel};
pub use profile::{FaultClass, FaultKind, FaultSpec, NodeProfile, NodeTimeline, Remedy};
pub use runner::{run_scenario, FaultLabel, RunSummary, ScenarioTrace, ServiceSpan};
pub use scenario::{
    BackgroundFaults, ConfigError, Escalation, FaultInjection, FaultMix, Features, JobSpec, MixEntry, ScenarioConfig,
};
pub use step::{gate, simulate_step, StepModel};
pub use thermal::thermal_freq;
