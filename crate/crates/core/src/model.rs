//! Shared vocabulary: nodes, devices, metric kinds, samples, jobs and steps.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// GPUs (and matching NICs) per node.
pub const GPUS_PER_NODE: usize = 8;

/// A malformed value, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {field}: {reason}")]
pub struct ValidationError {
    pub field: &'static str,
    pub reason: String,
}

impl ValidationError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

/// Opaque node identifier. Never empty.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(Arc<str>);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, ValidationError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ValidationError::new("node", "empty node id"));
        }
        Ok(Self(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeId {
    type Error = ValidationError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<NodeId> for String {
    fn from(value: NodeId) -> Self {
        String::from(&*value.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One GPU and its paired NIC on a node (GPU i is wired to NIC i).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceRef {
    pub node: NodeId,
    pub gpu_index: u8,
    pub nic_index: u8,
}

impl DeviceRef {
    pub fn new(node: NodeId, index: u8) -> Self {
        Self {
            node,
            gpu_index: index,
            nic_index: index,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.gpu_index as usize >= GPUS_PER_NODE {
            return Err(ValidationError::new("gpu", "index out of range 0..=7"));
        }
        if self.nic_index as usize >= GPUS_PER_NODE {
            return Err(ValidationError::new("nic", "index out of range 0..=7"));
        }
        Ok(())
    }
}

/// Which value a sample describes: a device, or a node's share of a job.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subject {
    Device(DeviceRef),
    Job { node: NodeId, job: String },
}

impl Subject {
    pub fn node(&self) -> &NodeId {
        match self {
            Subject::Device(d) => &d.node,
            Subject::Job { node, .. } => node,
        }
    }

    pub fn device_index(&self) -> Option<u8> {
        match self {
            Subject::Device(d) => Some(d.gpu_index),
            Subject::Job { .. } => None,
        }
    }
}

/// Direction in which a metric moving away from its peers is harmful.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Harmful {
    Low,
    High,
}

/// The eight monitored signals. `StepTime` is job-level, the rest are per device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "gpu_temp_c")]
    GpuTemperature,
    #[serde(rename = "gpu_util")]
    GpuUtilization,
    #[serde(rename = "gpu_clock_ghz")]
    GpuClockFrequency,
    #[serde(rename = "gpu_power_w")]
    GpuPowerDraw,
    #[serde(rename = "nic_err_count")]
    NicErrorCount,
    #[serde(rename = "nic_tx_gbps")]
    NicTransmitRate,
    #[serde(rename = "nic_link_up")]
    NicLinkUp,
    #[serde(rename = "step_time_s")]
    StepTime,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::GpuTemperature,
        MetricKind::GpuUtilization,
        MetricKind::GpuClockFrequency,
        MetricKind::GpuPowerDraw,
        MetricKind::NicErrorCount,
        MetricKind::NicTransmitRate,
        MetricKind::NicLinkUp,
        MetricKind::StepTime,
    ];

    /// The seven per-device kinds, in wire order.
    pub const DEVICE: [MetricKind; 7] = [
        MetricKind::GpuTemperature,
        MetricKind::GpuUtilization,
        MetricKind::GpuClockFrequency,
        MetricKind::GpuPowerDraw,
        MetricKind::NicErrorCount,
        MetricKind::NicTransmitRate,
        MetricKind::NicLinkUp,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            MetricKind::GpuTemperature => "gpu_temp_c",
            MetricKind::GpuUtilization => "gpu_util",
            MetricKind::GpuClockFrequency => "gpu_clock_ghz",
            MetricKind::GpuPowerDraw => "gpu_power_w",
            MetricKind::NicErrorCount => "nic_err_count",
            MetricKind::NicTransmitRate => "nic_tx_gbps",
            MetricKind::NicLinkUp => "nic_link_up",
            MetricKind::StepTime => "step_time_s",
        }
    }

    pub fn from_wire(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.wire_name() == name)
    }

    pub fn is_job_level(self) -> bool {
        self == MetricKind::StepTime
    }

    pub fn harmful(self) -> Harmful {
        match self {
            MetricKind::GpuTemperature | MetricKind::NicErrorCount | MetricKind::StepTime => Harmful::High,
            _ => Harmful::Low,
        }
    }

    pub(crate) fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// One timestamped reading. `timestamp` is seconds since scenario start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub subject: Subject,
    pub kind: MetricKind,
    pub timestamp: f64,
    pub value: f64,
}

impl MetricSample {
    pub fn device(node: NodeId, index: u8, kind: MetricKind, timestamp: f64, value: f64) -> Self {
        Self {
            subject: Subject::Device(DeviceRef::new(node, index)),
            kind,
            timestamp,
            value,
        }
    }

    pub fn step(node: NodeId, job: impl Into<String>, timestamp: f64, value: f64) -> Self {
        Self {
            subject: Subject::Job { node, job: job.into() },
            kind: MetricKind::StepTime,
            timestamp,
            value,
        }
    }
}

/// Checks every sample invariant; the error names the first violated field.
pub fn validate_sample(sample: &MetricSample) -> Result<(), ValidationError> {
    match (&sample.subject, sample.kind.is_job_level()) {
        (Subject::Device(d), false) => d.validate()?,
        (Subject::Job { job, .. }, true) => {
            if job.is_empty() {
                return Err(ValidationError::new("job", "empty job id"));
            }
        }
        (Subject::Device(_), true) => return Err(ValidationError::new("job", "step time requires a job")),
        (Subject::Job { .. }, false) => return Err(ValidationError::new("gpu", "device metric requires a gpu index")),
    }
    if !sample.timestamp.is_finite() || sample.timestamp < 0.0 {
        return Err(ValidationError::new("t", "negative or non-finite"));
    }
    let v = sample.value;
    if !v.is_finite() {
        return Err(ValidationError::new("value", "non-finite"));
    }
    let out_of_range = |reason: &str| Err(ValidationError::new("value", reason.to_string()));
    match sample.kind {
        MetricKind::GpuTemperature if !(0.0..=120.0).contains(&v) => out_of_range("temperature outside [0, 120]"),
        MetricKind::GpuUtilization if !(0.0..=1.0).contains(&v) => out_of_range("utilization outside [0, 1]"),
        MetricKind::GpuClockFrequency if v <= 0.0 => out_of_range("non-positive"),
        MetricKind::GpuClockFrequency if v > 3.0 => out_of_range("frequency above 3 GHz"),
        MetricKind::GpuPowerDraw | MetricKind::NicErrorCount | MetricKind::NicTransmitRate if v < 0.0 => {
            out_of_range("negative")
        }
        MetricKind::NicLinkUp if v != 0.0 && v != 1.0 => out_of_range("link state must be 0 or 1"),
        MetricKind::StepTime if v <= 0.0 => out_of_range("non-positive"),
        _ => Ok(()),
    }
}

/// The nodes running one synchronous job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobTopology {
    pub job_id: String,
    pub participants: Vec<NodeId>,
    pub sync_points_per_step: u32,
}

impl JobTopology {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.job_id.is_empty() {
            return Err(ValidationError::new("job_id", "empty"));
        }
        if self.participants.is_empty() {
            return Err(ValidationError::new("participants", "no participants"));
        }
        if self.sync_points_per_step == 0 {
            return Err(ValidationError::new("sync_points_per_step", "must be positive"));
        }
        let mut sorted: Vec<&NodeId> = self.participants.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ValidationError::new("participants", "duplicate node"));
        }
        Ok(())
    }
}

/// Wall time of one synchronous step and the node that gated it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTimeRecord {
    pub job_id: String,
    pub step_index: u64,
    pub wall_time_s: f64,
    pub slowest_node: NodeId,
}
