//! Evaluation of traces against ground truth: detection rates, reliability
//! and the four-arm ablation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::event::Event;
use crate::model::NodeId;
use crate::sim::{FaultClass, ScenarioConfig, ScenarioTrace};
use crate::stats;
use crate::sweep::SweepMode;

const HOUR_S: f64 = 3600.0;

/// One node over one time span, labeled faulty or healthy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeInterval {
    pub node: NodeId,
    pub start_s: f64,
    pub end_s: f64,
    pub faulty: bool,
    pub class: Option<FaultClass>,
    /// The interval runs to the end of the service span, so a flag at
    /// `end_s` (the one that removed the node) still falls inside it.
    #[serde(default)]
    pub closed: bool,
}

/// Splits each service span into faulty intervals (one per overlapping
/// fault label) and the healthy remainder.
pub fn node_intervals(trace: &ScenarioTrace) -> Vec<NodeInterval> {
    let mut out = Vec::new();
    for span in &trace.service {
        let mut faulty: Vec<(f64, f64, FaultClass)> = trace
            .labels
            .iter()
            .filter(|l| l.node == span.node)
            .filter_map(|l| {
                let s = l.start_s.max(span.start_s);
                let e = l.end_s.min(span.end_s);
                (s < e).then_some((s, e, l.class))
            })
            .collect();
        faulty.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (s, e, class) in &faulty {
            out.push(NodeInterval {
                node: span.node.clone(),
                start_s: *s,
                end_s: *e,
                faulty: true,
                class: Some(*class),
                closed: true,
            });
        }
        // Healthy remainder: span minus the union of faulty intervals.
        let mut cursor = span.start_s;
        for (s, e, _) in &faulty {
            if *s > cursor {
                out.push(NodeInterval {
                    node: span.node.clone(),
                    start_s: cursor,
                    end_s: *s,
                    faulty: false,
                    class: None,
                    closed: false,
                });
            }
            cursor = cursor.max(*e);
        }
        if span.end_s > cursor {
            out.push(NodeInterval {
                node: span.node.clone(),
                start_s: cursor,
                end_s: span.end_s,
                faulty: false,
                class: None,
                closed: true,
            });
        }
    }
    out
}

/// Flag times per node, from the event log.
pub fn flag_times(events: &[Event]) -> BTreeMap<NodeId, Vec<f64>> {
    let mut out: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for e in events {
        if let Event::Flag { node, t, .. } = e {
            out.entry(node.clone()).or_default().push(*t);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl LatencySummary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        Self {
            count: values.len(),
            mean: stats::mean(values).unwrap_or(0.0),
            median: stats::median(values).unwrap_or(0.0),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `None` when there were no negatives.
    pub fpr: Option<f64>,
    /// `None` when there were no positives.
    pub fnr: Option<f64>,
    pub negatives: usize,
    pub positives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    /// Windows from fault onset to the first flag, over true positives.
    pub detection_latency_windows: LatencySummary,
}

/// Scores labeled intervals against flag times. A faulty interval is
/// detected by a flag in `[start, end + grace_s]`; a healthy interval is a
/// false positive if any flag lands in `[start, end)`, or `[start, end]` when
/// it is closed.
pub fn score_intervals(
    intervals: &[NodeInterval],
    flags: &BTreeMap<NodeId, Vec<f64>>,
    grace_s: f64,
    window_len_s: f64,
) -> EvalResult {
    let empty = Vec::new();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut latencies = Vec::new();
    for iv in intervals {
        let times = flags.get(&iv.node).unwrap_or(&empty);
        if iv.faulty {
            let hit = times
                .iter()
                .copied()
                .filter(|t| *t >= iv.start_s && *t <= iv.end_s + grace_s)
                .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))));
            match hit {
                Some(t) => {
                    tp += 1;
                    latencies.push((t - iv.start_s) / window_len_s);
                }
                None => fn_ += 1,
            }
        } else if times
            .iter()
            .any(|t| *t >= iv.start_s && (*t < iv.end_s || (iv.closed && *t == iv.end_s)))
        {
            fp += 1;
        } else {
            tn += 1;
        }
    }
    let positives = tp + fn_;
    let negatives = fp + tn;
    EvalResult {
        fpr: (negatives > 0).then(|| fp as f64 / negatives as f64),
        fnr: (positives > 0).then(|| fn_ as f64 / positives as f64),
        negatives,
        positives,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        detection_latency_windows: LatencySummary::of(&latencies),
    }
}

/// Detection quality of one trace against its labels. The grace period is
/// `k_windows` windows after a fault ends.
pub fn eval_detection(trace: &ScenarioTrace) -> EvalResult {
    let grace = trace.summary.k_windows as f64 * trace.summary.window_len_s;
    score_intervals(
        &node_intervals(trace),
        &flag_times(&trace.events),
        grace,
        trace.summary.window_len_s,
    )
}

/// Operator time charged per event kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanCosts {
    /// Diagnosing a job crash.
    pub crash_h: f64,
    /// Hands-on repair of a crashed node.
    pub manual_repair_h: f64,
    /// Signing off a repeat-offender termination.
    pub manual_terminate_h: f64,
    /// Escalation when no replacement node is available.
    pub spare_exhausted_h: f64,
}

impl Default for HumanCosts {
    fn default() -> Self {
        Self {
            crash_h: 1.0,
            manual_repair_h: 1.0,
            manual_terminate_h: 0.5,
            spare_exhausted_h: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    pub duration_h: f64,
    pub incidents: u64,
    /// Simulated hours per job-impacting incident (the whole run when
    /// there were none).
    pub mttf_h: f64,
    /// Operator hours spent per simulated day.
    pub human_interval_h: f64,
    pub mean_step_s: f64,
    /// Useful step time over elapsed time.
    pub mfu_proxy: f64,
}

/// Operator hours recorded in an event log.
pub fn human_hours(events: &[Event], costs: &HumanCosts) -> f64 {
    events
        .iter()
        .map(|e| match e {
            Event::Crash { .. } => costs.crash_h,
            Event::ManualRepair { .. } => costs.manual_repair_h,
            Event::ManualTerminate { .. } => costs.manual_terminate_h,
            Event::SpareExhausted { .. } => costs.spare_exhausted_h,
            _ => 0.0,
        })
        .sum()
}

pub fn mttf_h(duration_h: f64, incidents: u64) -> f64 {
    if incidents == 0 {
        duration_h
    } else {
        duration_h / incidents as f64
    }
}

pub fn eval_reliability(trace: &ScenarioTrace, costs: &HumanCosts) -> Reliability {
    let s = &trace.summary;
    let duration_h = s.duration_s / HOUR_S;
    let incidents = s.incidents();
    let days = (s.duration_s / (24.0 * HOUR_S)).max(f64::MIN_POSITIVE);
    let mfu_proxy = if s.duration_s > 0.0 {
        (s.useful_steps as f64 * s.nominal_step_s / s.duration_s).min(1.0)
    } else {
        0.0
    };
    Reliability {
        duration_h,
        incidents,
        mttf_h: mttf_h(duration_h, incidents),
        human_interval_h: human_hours(&trace.events, costs) / days,
        mean_step_s: s.mean_step_s,
        mfu_proxy,
    }
}

/// Coefficient of variation of per-run mean step times, in percent.
pub fn variance_pct(mean_steps: &[f64]) -> f64 {
    stats::coefficient_of_variation(mean_steps).unwrap_or(0.0) * 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    /// No online detection; repaired nodes only get a burn-in test.
    BurnInOnly,
    /// No online detection; repaired nodes get the basic sweep.
    BasicSweep,
    /// Online detection plus the basic sweep.
    OnlineMonitoring,
    /// Online detection plus the enhanced sweep.
    EnhancedSweep,
}

impl AblationArm {
    pub const ALL: [AblationArm; 4] = [
        AblationArm::BurnInOnly,
        AblationArm::BasicSweep,
        AblationArm::OnlineMonitoring,
        AblationArm::EnhancedSweep,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationArm::BurnInOnly => "burn_in_only",
            AblationArm::BasicSweep => "basic_sweep",
            AblationArm::OnlineMonitoring => "online_monitoring",
            AblationArm::EnhancedSweep => "enhanced_sweep",
        }
    }

    /// The base scenario with this arm's features.
    pub fn configure(self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = base.clone();
        let (monitoring, mode) = match self {
            AblationArm::BurnInOnly => (false, SweepMode::BurnIn),
            AblationArm::BasicSweep => (false, SweepMode::Basic),
            AblationArm::OnlineMonitoring => (true, SweepMode::Basic),
            AblationArm::EnhancedSweep => (true, SweepMode::Enhanced),
        };
        cfg.features.online_monitoring = monitoring;
        cfg.features.remediation = true;
        cfg.sweep.mode = mode;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: AblationArm,
    pub label: String,
    pub seeds: usize,
    pub mttf_h: f64,
    pub human_interval_h: f64,
    pub mfu_proxy: f64,
}

/// Averages per-seed reliability results into one row per arm.
pub fn ablation_rows(results: &[(AblationArm, u64, Reliability)]) -> Vec<AblationRow> {
    AblationArm::ALL
        .iter()
        .filter_map(|arm| {
            let rs: Vec<&Reliability> = results.iter().filter(|(a, _, _)| a == arm).map(|(_, _, r)| r).collect();
            if rs.is_empty() {
                return None;
            }
            let avg = |f: fn(&Reliability) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            Some(AblationRow {
                arm: *arm,
                label: String::from(arm.label()),
                seeds: rs.len(),
                mttf_h: avg(|r| r.mttf_h),
                human_interval_h: avg(|r| r.human_interval_h),
                mfu_proxy: avg(|r| r.mfu_proxy),
            })
        })
        .collect()
}
