//! Fault catalog and per-node fault timelines.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{NodeId, ValidationError, GPUS_PER_NODE};

/// One injectable fault. Parameters are physical, e.g. the steady-state
/// temperature a throttling GPU settles at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultKind {
    Thermal {
        gpu: u8,
        temp_c: f64,
    },
    CpuMisconfig {
        factor: f64,
    },
    NicFailover {
        failed_nic: u8,
        fallback_nic: u8,
    },
    PowerAnomaly {
        fraction: f64,
    },
    NvlinkDegrade {
        a: u8,
        b: u8,
        factor: f64,
    },
    /// A GPU whose driver misbehaves: it emits errors and runs slow until
    /// the node is rebooted.
    DriverFault {
        gpu: u8,
        slowdown: f64,
    },
}

/// Fault families, for catalogs and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    Thermal,
    CpuMisconfig,
    NicFailover,
    PowerAnomaly,
    NvlinkDegrade,
    DriverFault,
}

impl FaultClass {
    pub const ALL: [FaultClass; 6] = [
        FaultClass::Thermal,
        FaultClass::CpuMisconfig,
        FaultClass::NicFailover,
        FaultClass::PowerAnomaly,
        FaultClass::NvlinkDegrade,
        FaultClass::DriverFault,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultClass::Thermal => "thermal",
            FaultClass::CpuMisconfig => "cpu_misconfig",
            FaultClass::NicFailover => "nic_failover",
            FaultClass::PowerAnomaly => "power_anomaly",
            FaultClass::NvlinkDegrade => "nvlink_degrade",
            FaultClass::DriverFault => "driver_fault",
        }
    }
}

/// What a remediation step does to a fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Remedy {
    Reboot,
    Reprovision,
}

impl FaultKind {
    pub fn class(&self) -> FaultClass {
        match self {
            FaultKind::Thermal { .. } => FaultClass::Thermal,
            FaultKind::CpuMisconfig { .. } => FaultClass::CpuMisconfig,
            FaultKind::NicFailover { .. } => FaultClass::NicFailover,
            FaultKind::PowerAnomaly { .. } => FaultClass::PowerAnomaly,
            FaultKind::NvlinkDegrade { .. } => FaultClass::NvlinkDegrade,
            FaultKind::DriverFault { .. } => FaultClass::DriverFault,
        }
    }

    /// Whether the fault degrades communication between nodes.
    pub fn is_inter_node(&self) -> bool {
        matches!(self, FaultKind::NicFailover { .. })
    }

    /// Whether the fault, left in service, eventually stops the job.
    /// Misconfiguration only slows it down.
    pub fn escalates(&self) -> bool {
        !matches!(self, FaultKind::CpuMisconfig { .. })
    }

    /// Whether the remedy clears the fault. Hardware faults need a
    /// replacement; software state is reset by a reboot or reprovision.
    pub fn cleared_by(&self, remedy: Remedy) -> bool {
        match self {
            FaultKind::DriverFault { .. } => true,
            FaultKind::CpuMisconfig { .. } => remedy == Remedy::Reprovision,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let gpu_ok = |g: u8| (g as usize) < GPUS_PER_NODE;
        match *self {
            FaultKind::Thermal { gpu, temp_c } => {
                if !gpu_ok(gpu) {
                    return Err(ValidationError::new("gpu", "index out of range"));
                }
                if !(30.0..=95.0).contains(&temp_c) {
                    return Err(ValidationError::new("temp_c", "must be in [30, 95]"));
                }
            }
            FaultKind::CpuMisconfig { factor } => {
                if !(factor >= 1.0 && factor.is_finite()) {
                    return Err(ValidationError::new("factor", "must be at least 1"));
                }
            }
            FaultKind::NicFailover {
                failed_nic,
                fallback_nic,
            } => {
                if !gpu_ok(failed_nic) || !gpu_ok(fallback_nic) {
                    return Err(ValidationError::new("nic", "index out of range"));
                }
                if failed_nic == fallback_nic {
                    return Err(ValidationError::new("fallback_nic", "must differ from failed_nic"));
                }
            }
            FaultKind::PowerAnomaly { fraction } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(ValidationError::new("fraction", "must be in (0, 1)"));
                }
            }
            FaultKind::NvlinkDegrade { a, b, factor } => {
                if !gpu_ok(a) || !gpu_ok(b) || a == b {
                    return Err(ValidationError::new("link", "needs two distinct GPUs"));
                }
                if !(factor > 0.0 && factor <= 1.0) {
                    return Err(ValidationError::new("factor", "must be in (0, 1]"));
                }
            }
            FaultKind::DriverFault { gpu, slowdown } => {
                if !gpu_ok(gpu) {
                    return Err(ValidationError::new("gpu", "index out of range"));
                }
                if !(slowdown >= 1.0 && slowdown.is_finite()) {
                    return Err(ValidationError::new("slowdown", "must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// A fault active on `[onset_s, cleared_s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub onset_s: f64,
    pub cleared_s: Option<f64>,
}

impl FaultSpec {
    pub fn active_at(&self, t: f64) -> bool {
        self.onset_s <= t && self.cleared_s.is_none_or(|c| t < c)
    }
}

/// The condition of one node at an instant: what a sweep or the step model
/// sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node: NodeId,
    pub steady_temp_c: [f64; GPUS_PER_NODE],
    pub cpu_slowdown_factor: f64,
    pub nic_failover: Option<(u8, u8)>,
    pub power_anomaly: Option<f64>,
    /// Degraded NVLink pairs `(i, j)` with i < j and their bandwidth factor.
    pub nvlink_degrade: Vec<((u8, u8), f64)>,
    /// Per-GPU compute slowdown from driver faults (1.0 = none).
    pub gpu_slowdown: [f64; GPUS_PER_NODE],
    pub gpu_error_emitting: bool,
}

impl NodeProfile {
    pub fn healthy(node: NodeId, temp_c: f64) -> Self {
        Self {
            node,
            steady_temp_c: [temp_c; GPUS_PER_NODE],
            cpu_slowdown_factor: 1.0,
            nic_failover: None,
            power_anomaly: None,
            nvlink_degrade: Vec::new(),
            gpu_slowdown: [1.0; GPUS_PER_NODE],
            gpu_error_emitting: false,
        }
    }

    /// Bandwidth factor of link (i, j), 1.0 when healthy.
    pub fn link_factor(&self, i: u8, j: u8) -> f64 {
        let key = (i.min(j), i.max(j));
        self.nvlink_degrade
            .iter()
            .filter(|(k, _)| *k == key)
            .map(|(_, f)| *f)
            .fold(1.0, f64::min)
    }

    /// Lowest bandwidth factor over all links.
    pub fn min_link_factor(&self) -> f64 {
        self.nvlink_degrade.iter().map(|(_, f)| *f).fold(1.0, f64::min)
    }

    /// No fault effect of any kind: full clocks, no CPU, NIC, power, NVLink
    /// or driver degradation.
    pub fn is_nominal(&self) -> bool {
        self.steady_temp_c
            .iter()
            .all(|t| super::thermal::thermal_freq(*t) >= super::thermal::NOMINAL_FREQ_GHZ)
            && self.cpu_slowdown_factor == 1.0
            && self.nic_failover.is_none()
            && self.power_anomaly.is_none()
            && self.nvlink_degrade.is_empty()
            && self.gpu_slowdown.iter().all(|s| *s == 1.0)
            && !self.gpu_error_emitting
    }

    /// Whether the node would show GPU or network errors while observed.
    pub fn emits_errors(&self) -> bool {
        self.gpu_error_emitting || self.nic_failover.is_some()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.steady_temp_c.iter().any(|t| !(30.0..=95.0).contains(t)) {
            return Err(ValidationError::new("steady_temp_c", "must be in [30, 95]"));
        }
        if !(self.cpu_slowdown_factor >= 1.0) {
            return Err(ValidationError::new("cpu_slowdown_factor", "must be at least 1"));
        }
        if let Some((a, b)) = self.nic_failover {
            if a == b {
                return Err(ValidationError::new("fallback_nic", "must differ from failed_nic"));
            }
        }
        if let Some(p) = self.power_anomaly {
            if !(0.0..1.0).contains(&p) {
                return Err(ValidationError::new("power_anomaly", "must be in [0, 1)"));
            }
        }
        if self.nvlink_degrade.iter().any(|(_, f)| !(*f > 0.0 && *f <= 1.0)) {
            return Err(ValidationError::new("nvlink_degrade", "factors must be in (0, 1]"));
        }
        Ok(())
    }
}

/// A node's baseline condition plus every fault it will ever suffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTimeline {
    pub node: NodeId,
    pub base_temp_c: [f64; GPUS_PER_NODE],
    pub faults: Vec<FaultSpec>,
}

impl NodeTimeline {
    pub fn new(node: NodeId, base_temp_c: [f64; GPUS_PER_NODE]) -> Self {
        Self {
            node,
            base_temp_c,
            faults: Vec::new(),
        }
    }

    pub fn profile_at(&self, t: f64) -> NodeProfile {
        let mut p = NodeProfile {
            node: self.node.clone(),
            steady_temp_c: self.base_temp_c,
            cpu_slowdown_factor: 1.0,
            nic_failover: None,
            power_anomaly: None,
            nvlink_degrade: Vec::new(),
            gpu_slowdown: [1.0; GPUS_PER_NODE],
            gpu_error_emitting: false,
        };
        for f in self.faults.iter().filter(|f| f.active_at(t)) {
            match f.kind {
                FaultKind::Thermal { gpu, temp_c } => {
                    let g = gpu as usize;
                    p.steady_temp_c[g] = p.steady_temp_c[g].max(temp_c);
                }
                FaultKind::CpuMisconfig { factor } => {
                    p.cpu_slowdown_factor = p.cpu_slowdown_factor.max(factor);
                }
                FaultKind::NicFailover {
                    failed_nic,
                    fallback_nic,
                } => {
                    p.nic_failover.get_or_insert((failed_nic, fallback_nic));
                }
                FaultKind::PowerAnomaly { fraction } => {
                    p.power_anomaly = Some(p.power_anomaly.unwrap_or(0.0).max(fraction));
                }
                FaultKind::NvlinkDegrade { a, b, factor } => {
                    p.nvlink_degrade.push(((a.min(b), a.max(b)), factor));
                }
                FaultKind::DriverFault { gpu, slowdown } => {
                    let g = gpu as usize;
                    p.gpu_slowdown[g] = p.gpu_slowdown[g].max(slowdown);
                    p.gpu_error_emitting = true;
                }
            }
        }
        p
    }

    /// Faults active at `t`.
    pub fn active(&self, t: f64) -> impl Iterator<Item = &FaultSpec> {
        self.faults.iter().filter(move |f| f.active_at(t))
    }

    pub fn is_faulty_at(&self, t: f64) -> bool {
        self.active(t).next().is_some()
    }

    /// Clears every active fault the remedy fixes. Returns how many cleared.
    pub fn apply_remedy(&mut self, remedy: Remedy, t: f64) -> usize {
        let mut n = 0;
        for f in self.faults.iter_mut() {
            if f.active_at(t) && f.kind.cleared_by(remedy) {
                f.cleared_s = Some(t);
                n += 1;
            }
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timeline() -> NodeTimeline {
        NodeTimeline::new(NodeId::new("n0").unwrap(), [55.0; GPUS_PER_NODE])
    }

    #[test]
    fn faults_activate_at_onset() {
        let mut tl = timeline();
        tl.faults.push(FaultSpec {
            kind: FaultKind::Thermal { gpu: 3, temp_c: 77.0 },
            onset_s: 100.0,
            cleared_s: None,
        });
        assert_eq!(tl.profile_at(99.0).steady_temp_c[3], 55.0);
        assert_eq!(tl.profile_at(100.0).steady_temp_c[3], 77.0);
    }

    #[test]
    fn reboot_clears_driver_but_not_hardware() {
        let mut tl = timeline();
        tl.faults.push(FaultSpec {
            kind: FaultKind::DriverFault { gpu: 1, slowdown: 1.3 },
            onset_s: 0.0,
            cleared_s: None,
        });
        tl.faults.push(FaultSpec {
            kind: FaultKind::NicFailover {
                failed_nic: 0,
                fallback_nic: 1,
            },
            onset_s: 0.0,
            cleared_s: None,
        });
        assert_eq!(tl.apply_remedy(Remedy::Reboot, 10.0), 1);
        let p = tl.profile_at(10.0);
        assert!(!p.gpu_error_emitting);
        assert!(p.emits_errors());
    }

    #[test]
    fn rejects_same_nic_failover() {
        let k = FaultKind::NicFailover {
            failed_nic: 2,
            fallback_nic: 2,
        };
        assert!(k.validate().is_err());
    }

    #[test]
    fn link_factor_is_symmetric() {
        let mut p = NodeProfile::healthy(NodeId::new("n").unwrap(), 55.0);
        p.nvlink_degrade.push(((2, 5), 0.5));
        assert_eq!(p.link_factor(5, 2), 0.5);
        assert_eq!(p.link_factor(2, 5), 0.5);
        assert_eq!(p.link_factor(0, 1), 1.0);
    }
}
