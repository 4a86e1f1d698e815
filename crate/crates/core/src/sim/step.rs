//! Synchronous step-time model.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::model::{NodeId, StepTimeRecord, ValidationError};
use crate::rng::{lognormal_factor, SimRng};

use super::profile::NodeProfile;
use super::thermal::{thermal_freq, NOMINAL_FREQ_GHZ};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepModel {
    pub nominal_time_s: f64,
    /// Log-scale sigma of the multiplicative per-node jitter.
    pub jitter_sigma: f64,
    /// Extra time per sync point while traffic is rerouted through a
    /// fallback NIC.
    pub failover_penalty_s: f64,
    /// Extra time per sync point per unit of `1/factor - 1` on the worst
    /// NVLink.
    pub nvlink_cost_s: f64,
}

impl Default for StepModel {
    fn default() -> Self {
        Self {
            nominal_time_s: 8.4,
            jitter_sigma: 0.005,
            failover_penalty_s: 0.3,
            nvlink_cost_s: 0.25,
        }
    }
}

impl StepModel {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.nominal_time_s > 0.0 && self.nominal_time_s.is_finite()) {
            return Err(ValidationError::new("nominal_time_s", "must be positive"));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma < 1.0) {
            return Err(ValidationError::new("jitter_sigma", "must be in [0, 1)"));
        }
        if self.failover_penalty_s < 0.0 || self.nvlink_cost_s < 0.0 {
            return Err(ValidationError::new("failover_penalty_s", "must be non-negative"));
        }
        Ok(())
    }

    /// Compute part of a node's step: the slowest GPU gates it.
    pub fn compute_time(&self, p: &NodeProfile) -> f64 {
        let gpu_factor = p
            .steady_temp_c
            .iter()
            .zip(p.gpu_slowdown.iter())
            .map(|(t, s)| NOMINAL_FREQ_GHZ / thermal_freq(*t) * s)
            .fold(1.0, f64::max);
        self.nominal_time_s * p.cpu_slowdown_factor * gpu_factor * (1.0 + p.power_anomaly.unwrap_or(0.0))
    }

    /// NVLink stall added per sync point.
    pub fn nvlink_penalty(&self, p: &NodeProfile) -> f64 {
        self.nvlink_cost_s * (1.0 / p.min_link_factor() - 1.0)
    }

    /// Communication penalty over the whole step.
    pub fn comm_time(&self, p: &NodeProfile, sync_points: u32) -> f64 {
        let failover = if p.nic_failover.is_some() {
            self.failover_penalty_s
        } else {
            0.0
        };
        sync_points as f64 * (failover + self.nvlink_penalty(p))
    }

    /// Noise-free contribution.
    pub fn expected_contribution(&self, p: &NodeProfile, sync_points: u32) -> f64 {
        self.compute_time(p) + self.comm_time(p, sync_points)
    }

    /// The node's time to reach the end-of-step barrier, with jitter.
    pub fn node_step_contribution(&self, p: &NodeProfile, sync_points: u32, rng: &mut SimRng) -> f64 {
        self.expected_contribution(p, sync_points) * lognormal_factor(rng, self.jitter_sigma)
    }
}

/// The barrier: wall time is the largest contribution; ties go to the
/// lowest node id.
pub fn gate<'a, I>(contributions: I) -> Option<(f64, &'a NodeId)>
where
    I: IntoIterator<Item = (&'a NodeId, f64)>,
{
    let mut best: Option<(f64, &NodeId)> = None;
    for (node, c) in contributions {
        best = match best {
            None => Some((c, node)),
            Some((bc, bn)) if c > bc || (c == bc && node < bn) => Some((c, node)),
            keep => keep,
        };
    }
    best
}

/// One synchronous step over `profiles` (in participant order). Returns the
/// record and writes each participant's contribution into `out`.
pub fn simulate_step(
    job_id: &str,
    step_index: u64,
    profiles: &[&NodeProfile],
    model: &StepModel,
    sync_points: u32,
    rng: &mut SimRng,
    out: &mut alloc::vec::Vec<f64>,
) -> StepTimeRecord {
    out.clear();
    out.extend(
        profiles
            .iter()
            .map(|p| model.node_step_contribution(p, sync_points, rng)),
    );
    let (wall, slowest) =
        gate(profiles.iter().map(|p| &p.node).zip(out.iter().copied())).expect("at least one participant");
    StepTimeRecord {
        job_id: String::from(job_id),
        step_index,
        wall_time_s: wall,
        slowest_node: slowest.clone(),
    }
}
