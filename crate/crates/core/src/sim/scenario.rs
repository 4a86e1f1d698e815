//! Scenario configuration.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::model::{NodeId, ValidationError};
use crate::sweep::SweepConfig;
use crate::triage::TriageConfig;
use crate::window::IngestConfig;

use super::metrics::MetricsModel;
use super::profile::{FaultClass, FaultKind};
use super::step::StepModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("fault injected on unknown node {0}")]
    UnknownNode(String),
}

/// Which parts of the health loop are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    /// Run the online detector on job telemetry.
    pub online_monitoring: bool,
    /// Act on flags (pool transitions, restarts, sweeps, triage). When off,
    /// flags are only logged.
    pub remediation: bool,
    /// Keep every metric sample in the trace.
    pub record_metrics: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self {
            online_monitoring: true,
            remediation: true,
            record_metrics: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobSpec {
    pub job_id: String,
    pub sync_points_per_step: u32,
}

impl Default for JobSpec {
    fn default() -> Self {
        Self {
            job_id: "job0".to_string(),
            sync_points_per_step: 1,
        }
    }
}

/// An explicitly injected fault. Exactly one of `onset_step` (job step
/// attempt index) or `onset_s` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    pub node: NodeId,
    pub fault: FaultKind,
    #[serde(default)]
    pub onset_step: Option<u64>,
    #[serde(default)]
    pub onset_s: Option<f64>,
    #[serde(default)]
    pub cleared_s: Option<f64>,
}

/// Parameter range and relative weight of one fault class in a mix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub weight: f64,
    #[serde(default)]
    pub lo: f64,
    #[serde(default)]
    pub hi: f64,
}

impl MixEntry {
    const fn new(weight: f64, lo: f64, hi: f64) -> Self {
        Self { weight, lo, hi }
    }
}

/// Fault classes drawn for background faults. `lo..hi` is the class
/// parameter: temperature for thermal, factor for CPU and NVLink, fraction
/// for power, slowdown for driver faults; unused for NIC failover.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultMix {
    pub thermal: MixEntry,
    pub cpu_misconfig: MixEntry,
    pub nic_failover: MixEntry,
    pub power_anomaly: MixEntry,
    pub nvlink_degrade: MixEntry,
    pub driver_fault: MixEntry,
}

impl Default for FaultMix {
    fn default() -> Self {
        Self {
            thermal: MixEntry::new(1.0, 74.0, 80.0),
            cpu_misconfig: MixEntry::new(1.0, 1.12, 1.3),
            nic_failover: MixEntry::new(1.0, 0.0, 0.0),
            power_anomaly: MixEntry::new(1.0, 0.12, 0.18),
            nvlink_degrade: MixEntry::new(1.0, 0.3, 0.5),
            driver_fault: MixEntry::new(1.0, 1.2, 1.4),
        }
    }
}

impl FaultMix {
    pub fn entry(&self, class: FaultClass) -> &MixEntry {
        match class {
            FaultClass::Thermal => &self.thermal,
            FaultClass::CpuMisconfig => &self.cpu_misconfig,
            FaultClass::NicFailover => &self.nic_failover,
            FaultClass::PowerAnomaly => &self.power_anomaly,
            FaultClass::NvlinkDegrade => &self.nvlink_degrade,
            FaultClass::DriverFault => &self.driver_fault,
        }
    }

    pub fn total_weight(&self) -> f64 {
        FaultClass::ALL.iter().map(|c| self.entry(*c).weight).sum()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        for c in FaultClass::ALL {
            let e = self.entry(c);
            if !(e.weight >= 0.0) || e.lo > e.hi {
                return Err(ValidationError::new("mix", format!("bad entry for {}", c.as_str())));
            }
        }
        if !(self.total_weight() > 0.0) {
            return Err(ValidationError::new("mix", "all weights are zero"));
        }
        Ok(())
    }
}

/// Faults arriving at random on every node (job members and spares).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundFaults {
    pub rate_per_node_h: f64,
    pub mix: FaultMix,
}

impl Default for BackgroundFaults {
    fn default() -> Self {
        Self {
            rate_per_node_h: 0.0,
            mix: FaultMix::default(),
        }
    }
}

/// Delay from a fault becoming active on a serving node until it stops the
/// job: `min_h + Exp(mean_h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Escalation {
    pub min_h: f64,
    pub mean_h: f64,
}

impl Default for Escalation {
    fn default() -> Self {
        Self {
            min_h: 2.0,
            mean_h: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Nodes in the job.
    pub node_count: usize,
    pub spare_count: usize,
    pub job: JobSpec,
    /// Cap on step attempts (including steps later rolled back).
    pub horizon_steps: u64,
    /// Cap on simulated time.
    pub horizon_s: Option<f64>,
    pub base_temp_c: (f64, f64),
    pub checkpoint_interval_steps: u64,
    pub restart_overhead_s: f64,
    pub crash_recovery_s: f64,
    pub repair_s: f64,
    /// Wait before retrying a sweep that had no qualified reference.
    pub sweep_retry_s: f64,
    /// Delay before a terminated node's replacement joins the spares;
    /// `None` means terminated nodes are not replaced.
    pub replacement_delay_s: Option<f64>,
    pub step: StepModel,
    pub metrics: MetricsModel,
    pub ingest: IngestConfig,
    pub detector: DetectorConfig,
    pub sweep: SweepConfig,
    pub triage: TriageConfig,
    pub features: Features,
    pub escalation: Escalation,
    pub faults: Vec<FaultInjection>,
    pub background: BackgroundFaults,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            node_count: 16,
            spare_count: 4,
            job: JobSpec::default(),
            horizon_steps: 1000,
            horizon_s: None,
            base_temp_c: (50.0, 60.0),
            checkpoint_interval_steps: 50,
            restart_overhead_s: 600.0,
            crash_recovery_s: 1800.0,
            repair_s: 7200.0,
            sweep_retry_s: 1800.0,
            replacement_delay_s: Some(3600.0),
            step: StepModel::default(),
            metrics: MetricsModel::default(),
            ingest: IngestConfig::default(),
            detector: DetectorConfig::default(),
            sweep: SweepConfig::default(),
            triage: TriageConfig::default(),
            features: Features::default(),
            escalation: Escalation::default(),
            faults: Vec::new(),
            background: BackgroundFaults::default(),
        }
    }
}

/// Id of the i-th job node.
pub fn node_name(i: usize) -> NodeId {
    NodeId::new(format!("n{i:03}")).expect("non-empty")
}

/// Id of the i-th spare.
pub fn spare_name(i: usize) -> NodeId {
    NodeId::new(format!("s{i:03}")).expect("non-empty")
}

/// Id of the i-th node provisioned to replace a terminated one.
pub fn replacement_name(i: usize) -> NodeId {
    NodeId::new(format!("r{i:03}")).expect("non-empty")
}

impl ScenarioConfig {
    pub fn job_nodes(&self) -> Vec<NodeId> {
        (0..self.node_count).map(node_name).collect()
    }

    pub fn spare_nodes(&self) -> Vec<NodeId> {
        (0..self.spare_count).map(spare_name).collect()
    }

    /// Simulated time used to lay out background faults.
    pub fn fault_horizon_s(&self) -> f64 {
        self.horizon_s
            .unwrap_or(self.horizon_steps as f64 * self.step.nominal_time_s * 2.0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_count < 1 {
            return Err(ValidationError::new("node_count", "must be at least 1").into());
        }
        if self.horizon_steps < 1 {
            return Err(ValidationError::new("horizon_steps", "must be at least 1").into());
        }
        if let Some(h) = self.horizon_s {
            if !(h > 0.0) {
                return Err(ValidationError::new("horizon_s", "must be positive").into());
            }
        }
        let (lo, hi) = self.base_temp_c;
        if !(30.0 <= lo && lo <= hi && hi <= 95.0) {
            return Err(ValidationError::new("base_temp_c", "need 30 <= lo <= hi <= 95").into());
        }
        if self.checkpoint_interval_steps < 1 {
            return Err(ValidationError::new("checkpoint_interval_steps", "must be at least 1").into());
        }
        let durations = [
            self.restart_overhead_s,
            self.crash_recovery_s,
            self.repair_s,
            self.sweep_retry_s,
        ];
        if durations.iter().any(|d| !(*d >= 0.0)) {
            return Err(ValidationError::new("restart_overhead_s", "durations must be non-negative").into());
        }
        if self.replacement_delay_s.is_some_and(|d| !(d >= 0.0)) {
            return Err(ValidationError::new("replacement_delay_s", "must be non-negative").into());
        }
        if self.sweep_retry_s <= 0.0 {
            return Err(ValidationError::new("sweep_retry_s", "must be positive").into());
        }
        if self.job.job_id.is_empty() {
            return Err(ValidationError::new("job_id", "empty").into());
        }
        if self.job.sync_points_per_step == 0 {
            return Err(ValidationError::new("sync_points_per_step", "must be positive").into());
        }
        self.step.validate()?;
        self.metrics.validate()?;
        self.ingest.validate()?;
        self.detector.validate()?;
        self.sweep.validate()?;
        self.triage.validate()?;
        if !(self.escalation.min_h >= 0.0 && self.escalation.mean_h >= 0.0) {
            return Err(ValidationError::new("escalation", "must be non-negative").into());
        }
        if !(self.background.rate_per_node_h >= 0.0) {
            return Err(ValidationError::new("rate_per_node_h", "must be non-negative").into());
        }
        self.background.mix.validate()?;
        let known: Vec<NodeId> = self.job_nodes().into_iter().chain(self.spare_nodes()).collect();
        for f in &self.faults {
            if !known.contains(&f.node) {
                return Err(ConfigError::UnknownNode(f.node.to_string()));
            }
            f.fault.validate()?;
            match (f.onset_step, f.onset_s) {
                (Some(_), None) => {}
                (None, Some(t)) if t >= 0.0 => {}
                _ => {
                    return Err(ValidationError::new(
                        "onset",
                        "give exactly one of onset_step or a non-negative onset_s",
                    )
                    .into())
                }
            }
        }
        Ok(())
    }
}
