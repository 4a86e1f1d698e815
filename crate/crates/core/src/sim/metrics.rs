//! Telemetry emitted by a node at each poll.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{MetricKind, MetricSample, ValidationError, GPUS_PER_NODE};
use crate::rng::{normal, SimRng};

use super::profile::NodeProfile;
use super::step::StepModel;
use super::thermal::{thermal_freq, NOMINAL_FREQ_GHZ};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsModel {
    pub poll_interval_s: f64,
    pub temp_noise_c: f64,
    pub freq_noise_ghz: f64,
    pub power_nominal_w: f64,
    pub power_noise_w: f64,
    pub util_nominal: f64,
    pub util_noise: f64,
    pub tx_nominal_gbps: f64,
    pub tx_noise_gbps: f64,
    /// Mean error count per poll on a NIC carrying rerouted traffic.
    pub fallback_err_mean: f64,
    /// Chance a healthy NIC reports a single spurious error in a poll.
    pub spurious_err_prob: f64,
}

impl Default for MetricsModel {
    fn default() -> Self {
        Self {
            poll_interval_s: 30.0,
            temp_noise_c: 0.5,
            freq_noise_ghz: 0.005,
            power_nominal_w: 700.0,
            power_noise_w: 5.0,
            util_nominal: 0.95,
            util_noise: 0.005,
            tx_nominal_gbps: 100.0,
            tx_noise_gbps: 1.0,
            fallback_err_mean: 6.0,
            spurious_err_prob: 0.002,
        }
    }
}

impl MetricsModel {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.poll_interval_s > 0.0 && self.poll_interval_s.is_finite()) {
            return Err(ValidationError::new("poll_interval_s", "must be positive"));
        }
        let noises = [
            self.temp_noise_c,
            self.freq_noise_ghz,
            self.power_noise_w,
            self.util_noise,
            self.tx_noise_gbps,
        ];
        if noises.iter().any(|s| !(*s >= 0.0)) {
            return Err(ValidationError::new("noise", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.spurious_err_prob) {
            return Err(ValidationError::new("spurious_err_prob", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Noise-free utilization of GPU `g`: busy compute time over the time
    /// spent per step, including stalls on the GPU's own links.
    pub fn expected_util(&self, p: &NodeProfile, g: usize, step: &StepModel, sync_points: u32) -> f64 {
        let nominal = step.nominal_time_s;
        let link_stall = if p
            .nvlink_degrade
            .iter()
            .any(|((a, b), _)| *a as usize == g || *b as usize == g)
        {
            sync_points as f64 * step.nvlink_penalty(p)
        } else {
            0.0
        };
        let busy = nominal * p.cpu_slowdown_factor * p.gpu_slowdown[g] + link_stall;
        self.util_nominal * nominal / busy
    }

    /// Noise-free power draw of a GPU running at `freq`.
    pub fn expected_power(&self, p: &NodeProfile, freq: f64) -> f64 {
        self.power_nominal_w * (1.0 - p.power_anomaly.unwrap_or(0.0)) * (freq / NOMINAL_FREQ_GHZ)
    }
}

/// Appends one poll's device samples for `p` at time `t` to `out`.
pub fn emit_metrics(
    p: &NodeProfile,
    t: f64,
    model: &MetricsModel,
    step: &StepModel,
    sync_points: u32,
    rng: &mut SimRng,
    out: &mut Vec<MetricSample>,
) {
    let node = &p.node;
    for g in 0..GPUS_PER_NODE {
        let idx = g as u8;
        let temp = normal(rng, p.steady_temp_c[g], model.temp_noise_c).clamp(0.0, 120.0);
        let freq = (thermal_freq(temp) + normal(rng, 0.0, model.freq_noise_ghz)).clamp(0.01, 3.0);
        let power = normal(rng, model.expected_power(p, freq), model.power_noise_w).max(0.0);
        let util = normal(rng, model.expected_util(p, g, step, sync_points), model.util_noise).clamp(0.0, 1.0);
        out.push(MetricSample::device(
            node.clone(),
            idx,
            MetricKind::GpuTemperature,
            t,
            temp,
        ));
        out.push(MetricSample::device(
            node.clone(),
            idx,
            MetricKind::GpuClockFrequency,
            t,
            freq,
        ));
        out.push(MetricSample::device(
            node.clone(),
            idx,
            MetricKind::GpuPowerDraw,
            t,
            power,
        ));
        out.push(MetricSample::device(
            node.clone(),
            idx,
            MetricKind::GpuUtilization,
            t,
            util,
        ));
    }
    for nic in 0..GPUS_PER_NODE {
        let idx = nic as u8;
        let (failed, fallback) = match p.nic_failover {
            Some((f, b)) => (f == idx, b == idx),
            None => (false, false),
        };
        let (link, tx, err) = if failed {
            (0.0, 0.0, 0.0)
        } else {
            let load = if fallback { 2.0 } else { 1.0 };
            let tx = normal(rng, load * model.tx_nominal_gbps, model.tx_noise_gbps).max(0.0);
            let err = if fallback {
                libm::round(normal(rng, model.fallback_err_mean, 1.0).max(1.0))
            } else if rng.random::<f64>() < model.spurious_err_prob {
                1.0
            } else {
                0.0
            };
            (1.0, tx, err)
        };
        out.push(MetricSample::device(node.clone(), idx, MetricKind::NicLinkUp, t, link));
        out.push(MetricSample::device(
            node.clone(),
            idx,
            MetricKind::NicTransmitRate,
            t,
            tx,
        ));
        out.push(MetricSample::device(
            node.clone(),
            idx,
            MetricKind::NicErrorCount,
            t,
            err,
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeId;
    use crate::rng::{stream, Stream};
    use alloc::vec;

    fn quiet() -> MetricsModel {
        MetricsModel {
            temp_noise_c: 0.0,
            freq_noise_ghz: 0.0,
            power_noise_w: 0.0,
            util_noise: 0.0,
            tx_noise_gbps: 0.0,
            spurious_err_prob: 0.0,
            ..MetricsModel::default()
        }
    }

    fn values(samples: &[MetricSample], kind: MetricKind) -> Vec<f64> {
        samples.iter().filter(|s| s.kind == kind).map(|s| s.value).collect()
    }

    #[test]
    fn healthy_node_reports_nominal_network() {
        let p = NodeProfile::healthy(NodeId::new("a").unwrap(), 55.0);
        let mut out = vec![];
        let mut rng = stream(3, Stream::Metrics);
        emit_metrics(&p, 0.0, &quiet(), &StepModel::default(), 1, &mut rng, &mut out);
        assert_eq!(out.len(), 7 * GPUS_PER_NODE);
        assert!(values(&out, MetricKind::NicLinkUp).iter().all(|v| *v == 1.0));
        assert!(values(&out, MetricKind::NicTransmitRate).iter().all(|v| *v == 100.0));
    }

    #[test]
    fn failover_reroutes_traffic() {
        let mut p = NodeProfile::healthy(NodeId::new("a").unwrap(), 55.0);
        p.nic_failover = Some((0, 1));
        let mut out = vec![];
        let mut rng = stream(3, Stream::Metrics);
        emit_metrics(&p, 0.0, &quiet(), &StepModel::default(), 1, &mut rng, &mut out);
        let link = values(&out, MetricKind::NicLinkUp);
        let tx = values(&out, MetricKind::NicTransmitRate);
        let err = values(&out, MetricKind::NicErrorCount);
        assert_eq!((link[0], tx[0]), (0.0, 0.0));
        assert_eq!(tx[1], 200.0);
        assert!(err[1] >= 1.0);
    }

    #[test]
    fn hot_gpu_reports_throttled_clock() {
        let mut p = NodeProfile::healthy(NodeId::new("a").unwrap(), 55.0);
        p.steady_temp_c[3] = 77.0;
        let mut out = vec![];
        let mut rng = stream(3, Stream::Metrics);
        emit_metrics(&p, 0.0, &quiet(), &StepModel::default(), 1, &mut rng, &mut out);
        assert_eq!(values(&out, MetricKind::GpuClockFrequency)[3], 1.38);
    }
}
