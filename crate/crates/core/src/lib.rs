//! Core of the Guard node-health loop.
//!
//! Everything in this crate is pure computation over in-memory values: metric
//! windowing, peer-relative grey-node detection, the good-node-pool state
//! machine, offline sweep judgment, remediation triage, and a deterministic
//! fault-injecting simulator of synchronous training that wires them together.
//! File formats, the CLI and evaluation live in the `guard` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is how validation rejects NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod detector;
pub mod eval;
pub mod event;
pub mod model;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod sweep;
pub mod triage;
pub mod window;

pub use detector::{DetectorConfig, DeviationReport, GreyNodeFlag, PeerBaseline, SeverityTier};
pub use eval::{AblationArm, AblationRow, EvalResult, HumanCosts, Reliability};
pub use event::Event;
pub use model::{DeviceRef, JobTopology, MetricKind, MetricSample, NodeId, StepTimeRecord, Subject, ValidationError};
pub use policy::{Action, NodePool, NodePoolState, PoolStatus};
pub use sim::{run_scenario, ScenarioConfig, ScenarioTrace};
pub use sweep::{SweepConfig, SweepVerdict};
pub use triage::{TriageConfig, TriageStage, TriageState};
pub use window::{IngestConfig, WindowAggregator, WindowOutput, WindowStats};
