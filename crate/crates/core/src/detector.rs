//! Peer-relative, multi-signal, temporally filtered grey-node detection.
//!
//! Per window, every node's per-device aggregates are reduced to one
//! node-level value per kind (the worst device). Each kind is then compared
//! against the median and MAD of the job's peers, one-sided in the harmful
//! direction. A node is flagged once `k_windows` consecutive windows show at
//! least `min_signals` deviating kinds, or once its step-time slowdown is
//! severe for the whole run of windows.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MetricSample;
use crate::model::{Harmful, MetricKind, NodeId, ValidationError};
use crate::stats;
use crate::window::{IngestConfig, IngestError, WindowAggregator, WindowOutput, WindowStats};

/// A set of metric kinds stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct KindSet(u8);

impl KindSet {
    pub const fn empty() -> Self {
        Self(0)
    }

    pub fn insert(&mut self, kind: MetricKind) {
        self.0 |= kind.bit();
    }

    pub fn contains(&self, kind: MetricKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = MetricKind> + '_ {
        MetricKind::ALL.into_iter().filter(|k| self.contains(*k))
    }
}

impl FromIterator<MetricKind> for KindSet {
    fn from_iter<T: IntoIterator<Item = MetricKind>>(iter: T) -> Self {
        let mut s = KindSet::empty();
        iter.into_iter().for_each(|k| s.insert(k));
        s
    }
}

impl fmt::Debug for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for KindSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for KindSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let kinds = Vec::<MetricKind>::deserialize(deserializer)?;
        Ok(kinds.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityTier {
    NoImpact,
    Moderate,
    Severe,
}

impl SeverityTier {
    pub fn as_str(self) -> &'static str {
        match self {
            SeverityTier::NoImpact => "no_impact",
            SeverityTier::Moderate => "moderate",
            SeverityTier::Severe => "severe",
        }
    }
}

/// How step-time slowdown is attributed to nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAttribution {
    /// Each node reports its own step contribution (simulation, or
    /// instrumented training loops).
    #[default]
    PerNode,
    /// Only the job's step time is observable; slowdowns flag the job and
    /// localization is left to sweeps.
    JobOnly,
}

/// Per-kind MAD floors: the smallest spread the detector will assume, so
/// homogeneous peers with zero MAD do not make it hypersensitive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MadFloors {
    pub gpu_temp_c: f64,
    pub gpu_util: f64,
    pub gpu_clock_ghz: f64,
    pub gpu_power_w: f64,
    pub nic_err_count: f64,
    pub nic_tx_gbps: f64,
    pub nic_link_up: f64,
    pub step_time_s: f64,
}

impl Default for MadFloors {
    fn default() -> Self {
        Self {
            gpu_temp_c: 1.0,
            gpu_util: 0.01,
            gpu_clock_ghz: 0.05,
            gpu_power_w: 10.0,
            nic_err_count: 1.0,
            nic_tx_gbps: 1.0,
            nic_link_up: 0.1,
            step_time_s: 0.05,
        }
    }
}

impl MadFloors {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::GpuTemperature => self.gpu_temp_c,
            MetricKind::GpuUtilization => self.gpu_util,
            MetricKind::GpuClockFrequency => self.gpu_clock_ghz,
            MetricKind::GpuPowerDraw => self.gpu_power_w,
            MetricKind::NicErrorCount => self.nic_err_count,
            MetricKind::NicTransmitRate => self.nic_tx_gbps,
            MetricKind::NicLinkUp => self.nic_link_up,
            MetricKind::StepTime => self.step_time_s,
        }
    }

    pub fn set(&mut self, kind: MetricKind, value: f64) {
        match kind {
            MetricKind::GpuTemperature => self.gpu_temp_c = value,
            MetricKind::GpuUtilization => self.gpu_util = value,
            MetricKind::GpuClockFrequency => self.gpu_clock_ghz = value,
            MetricKind::GpuPowerDraw => self.gpu_power_w = value,
            MetricKind::NicErrorCount => self.nic_err_count = value,
            MetricKind::NicTransmitRate => self.nic_tx_gbps = value,
            MetricKind::NicLinkUp => self.nic_link_up = value,
            MetricKind::StepTime => self.step_time_s = value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub deviation_z: f64,
    pub k_windows: usize,
    pub min_signals: usize,
    pub moderate_lo: f64,
    pub severe_lo: f64,
    /// A node-attributed step time above this multiple of the peer median is
    /// a stall.
    pub stall_factor: f64,
    pub floors: MadFloors,
    pub attribution: StepAttribution,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            deviation_z: 3.0,
            k_windows: 3,
            min_signals: 2,
            moderate_lo: 0.10,
            severe_lo: 0.20,
            stall_factor: 5.0,
            floors: MadFloors::default(),
            attribution: StepAttribution::PerNode,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.moderate_lo > 0.0 && self.moderate_lo < self.severe_lo) {
            return Err(ValidationError::new("moderate_lo", "need 0 < moderate_lo < severe_lo"));
        }
        if self.k_windows < 1 {
            return Err(ValidationError::new("k_windows", "must be at least 1"));
        }
        if self.min_signals < 1 {
            return Err(ValidationError::new("min_signals", "must be at least 1"));
        }
        if !(self.deviation_z > 0.0) {
            return Err(ValidationError::new("deviation_z", "must be positive"));
        }
        if !(self.stall_factor > 1.0) {
            return Err(ValidationError::new("stall_factor", "must exceed 1"));
        }
        Ok(())
    }

    /// The tightened configuration used for nodes under closer monitoring.
    pub fn monitored_closely(&self) -> Self {
        Self {
            k_windows: (self.k_windows / 2).max(1),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectorError {
    #[error("{kind}: need at least 2 peers for a baseline, have {have}")]
    InsufficientPeers { kind: MetricKind, have: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerBaseline {
    pub kind: MetricKind,
    pub window_index: u64,
    pub median: f64,
    pub mad: f64,
    pub peer_count: usize,
}

/// Median and MAD of node-level values across the job's peers.
pub fn peer_baseline(values: &[f64], kind: MetricKind, window_index: u64) -> Result<PeerBaseline, DetectorError> {
    if values.len() < 2 {
        return Err(DetectorError::InsufficientPeers {
            kind,
            have: values.len(),
        });
    }
    let median = stats::median(values).expect("non-empty");
    let mad = stats::mad(values, median).expect("non-empty");
    Ok(PeerBaseline {
        kind,
        window_index,
        median,
        mad,
        peer_count: values.len(),
    })
}

/// Node-level values for one window: the worst device per kind, and the
/// node's mean step contribution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeWindow {
    pub values: BTreeMap<MetricKind, f64>,
    /// Kinds for which the node went silent while peers kept reporting.
    pub gaps: KindSet,
}

fn worse(kind: MetricKind, a: f64, b: f64) -> f64 {
    match kind.harmful() {
        Harmful::High => a.max(b),
        Harmful::Low => a.min(b),
    }
}

/// Reduces one window's outputs to node-level values for the given nodes.
/// Outputs for other windows or other nodes are ignored.
pub fn reduce_window<'a, I>(outputs: I, window_index: u64) -> BTreeMap<NodeId, NodeWindow>
where
    I: IntoIterator<Item = &'a WindowOutput>,
{
    let mut nodes: BTreeMap<NodeId, NodeWindow> = BTreeMap::new();
    for out in outputs {
        match out {
            WindowOutput::Stats(s) if s.window_index == window_index => {
                reduce_into(&mut nodes, s);
            }
            WindowOutput::Gap(g) if g.first_missing_window <= window_index && window_index <= g.last_missing_window => {
                nodes.entry(g.subject.node().clone()).or_default().gaps.insert(g.kind);
            }
            _ => {}
        }
    }
    nodes
}

fn reduce_into(nodes: &mut BTreeMap<NodeId, NodeWindow>, s: &WindowStats) {
    let node = s.subject.node();
    // Outputs usually arrive grouped by node.
    let entry = match nodes.last_entry() {
        Some(e) if e.key() == node => e.into_mut(),
        _ => nodes.entry(node.clone()).or_default(),
    };
    entry
        .values
        .entry(s.kind)
        .and_modify(|v| *v = worse(s.kind, *v, s.mean))
        .or_insert(s.mean);
}

/// Baselines for every kind with at least two reporting peers.
pub fn baselines_for(nodes: &BTreeMap<NodeId, NodeWindow>, window_index: u64) -> BTreeMap<MetricKind, PeerBaseline> {
    let mut out = BTreeMap::new();
    for kind in MetricKind::ALL {
        let values: Vec<f64> = nodes.values().filter_map(|n| n.values.get(&kind).copied()).collect();
        if let Ok(b) = peer_baseline(&values, kind, window_index) {
            out.insert(kind, b);
        }
    }
    out
}

/// One node's deviations in one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub node: NodeId,
    pub window_index: u64,
    pub flagged: KindSet,
    /// (node step - peer median) / peer median; +inf marks a stall.
    pub relative_step_slowdown: f64,
}

/// Whether `value` deviates from `baseline` in the harmful direction by more
/// than `z * max(mad, floor)`.
pub fn deviates(kind: MetricKind, value: f64, baseline: &PeerBaseline, z: f64, floor: f64) -> bool {
    let scale = baseline.mad.max(floor);
    let excess = match kind.harmful() {
        Harmful::High => value - baseline.median,
        Harmful::Low => baseline.median - value,
    };
    excess > z * scale
}

pub fn evaluate_node(
    node: &NodeId,
    window_index: u64,
    values: &NodeWindow,
    baselines: &BTreeMap<MetricKind, PeerBaseline>,
    cfg: &DetectorConfig,
) -> DeviationReport {
    let mut flagged = KindSet::empty();
    for (kind, value) in &values.values {
        if *kind == MetricKind::StepTime && cfg.attribution == StepAttribution::JobOnly {
            continue;
        }
        if let Some(b) = baselines.get(kind) {
            if deviates(*kind, *value, b, cfg.deviation_z, cfg.floors.get(*kind)) {
                flagged.insert(*kind);
            }
        }
    }
    if values.gaps.contains(MetricKind::NicLinkUp) {
        flagged.insert(MetricKind::NicLinkUp);
    }
    let relative_step_slowdown = match (
        cfg.attribution,
        values.values.get(&MetricKind::StepTime),
        baselines.get(&MetricKind::StepTime),
    ) {
        (StepAttribution::PerNode, Some(v), Some(b)) if b.median > 0.0 => {
            if *v > cfg.stall_factor * b.median {
                f64::INFINITY
            } else {
                ((v - b.median) / b.median).max(-1.0)
            }
        }
        _ => 0.0,
    };
    DeviationReport {
        node: node.clone(),
        window_index,
        flagged,
        relative_step_slowdown,
    }
}

/// Severity over the last `k_windows` of a slowdown history. Sustained means
/// every window in that span qualifies; a stall anywhere in it is Severe.
pub fn classify_severity(history: &[f64], cfg: &DetectorConfig) -> SeverityTier {
    let k = cfg.k_windows.max(1);
    let recent = &history[history.len().saturating_sub(k)..];
    if recent.iter().any(|s| s.is_infinite() && *s > 0.0) {
        return SeverityTier::Severe;
    }
    if recent.len() < k {
        return SeverityTier::NoImpact;
    }
    let min = recent.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= cfg.severe_lo {
        SeverityTier::Severe
    } else if min >= cfg.moderate_lo {
        SeverityTier::Moderate
    } else {
        SeverityTier::NoImpact
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreyNodeFlag {
    pub node: NodeId,
    /// First window of the confirming run.
    pub first_window: u64,
    /// Window at which the flag is raised.
    pub window: u64,
    pub confirming_windows: usize,
    pub kinds: KindSet,
    pub severity: SeverityTier,
}

/// Scans per-window reports for one node (ordered by window) and returns the
/// flag raised at the first qualifying window, if any.
pub fn flag_decision(reports: &[DeviationReport], cfg: &DetectorConfig) -> Option<GreyNodeFlag> {
    let k = cfg.k_windows.max(1);
    if reports.len() < k {
        return None;
    }
    for end in (k - 1)..reports.len() {
        let run = &reports[end + 1 - k..=end];
        let consecutive = run.windows(2).all(|w| w[1].window_index == w[0].window_index + 1);
        if !consecutive {
            continue;
        }
        let slowdowns: Vec<f64> = run.iter().map(|r| r.relative_step_slowdown).collect();
        let severity = classify_severity(&slowdowns, cfg);
        let hardware = run.iter().all(|r| r.flagged.len() >= cfg.min_signals);
        if hardware || severity == SeverityTier::Severe {
            let kinds = run.iter().fold(KindSet::empty(), |acc, r| acc.union(r.flagged));
            return Some(GreyNodeFlag {
                node: run[0].node.clone(),
                first_window: run[0].window_index,
                window: run[k - 1].window_index,
                confirming_windows: k,
                kinds,
                severity,
            });
        }
    }
    None
}

/// Rolling per-node report history feeding [`flag_decision`].
#[derive(Clone, Debug, Default)]
pub struct NodeHistory {
    reports: Vec<DeviationReport>,
    /// Severity already raised for the run still in progress.
    raised: Option<SeverityTier>,
}

impl NodeHistory {
    /// Appends a report and returns a flag if the newest window completes a
    /// qualifying run. While a run stays qualified it is flagged again only
    /// when its severity rises. A Severe flag clears the history so the next
    /// flag needs fresh evidence.
    pub fn push(&mut self, report: DeviationReport, cfg: &DetectorConfig) -> Option<GreyNodeFlag> {
        if let Some(last) = self.reports.last() {
            if report.window_index != last.window_index + 1 {
                self.clear();
            }
        }
        self.reports.push(report);
        let k = cfg.k_windows.max(1);
        if self.reports.len() > k {
            let drop = self.reports.len() - k;
            self.reports.drain(..drop);
        }
        let Some(flag) = flag_decision(&self.reports, cfg) else {
            self.raised = None;
            return None;
        };
        if self.raised.is_some_and(|r| r >= flag.severity) {
            return None;
        }
        if flag.severity == SeverityTier::Severe {
            self.clear();
        } else {
            self.raised = Some(flag.severity);
        }
        Some(flag)
    }

    pub fn clear(&mut self) {
        self.reports.clear();
        self.raised = None;
    }
}

/// Job-level watch used when only job step time is observable: flags the job
/// when its windowed step time stays above its own early baseline.
#[derive(Clone, Debug, Default)]
pub struct JobWatch {
    baseline: Vec<f64>,
    recent: Vec<f64>,
}

/// Number of leading windows used to establish a job's own baseline.
pub const JOB_BASELINE_WINDOWS: usize = 5;

impl JobWatch {
    /// Feeds one window's job step time; returns a tier once the baseline is
    /// established and the last `k_windows` are sustained above it.
    pub fn push(&mut self, step_time: f64, cfg: &DetectorConfig) -> Option<SeverityTier> {
        if self.baseline.len() < JOB_BASELINE_WINDOWS {
            self.baseline.push(step_time);
            return None;
        }
        let base = stats::median(&self.baseline).expect("non-empty");
        self.recent.push((step_time - base) / base);
        let k = cfg.k_windows.max(1);
        if self.recent.len() > k {
            self.recent.remove(0);
        }
        match classify_severity(&self.recent, cfg) {
            SeverityTier::NoImpact => None,
            tier => {
                self.recent.clear();
                Some(tier)
            }
        }
    }
}

/// Distinct kinds in a set, in canonical order.
pub fn kind_list(set: KindSet) -> BTreeSet<MetricKind> {
    set.iter().collect()
}

/// Windowing plus detection over a metric stream, with no pool attached:
/// every node that reports in a window is evaluated against its peers.
#[derive(Clone, Debug)]
pub struct StreamDetector {
    cfg: DetectorConfig,
    agg: WindowAggregator,
    histories: BTreeMap<NodeId, NodeHistory>,
}

impl StreamDetector {
    pub fn new(ingest: IngestConfig, cfg: DetectorConfig) -> Self {
        Self {
            cfg,
            agg: WindowAggregator::new(ingest),
            histories: BTreeMap::new(),
        }
    }

    /// Feeds one sample; windows that can no longer receive data are
    /// evaluated and any resulting flags returned.
    pub fn push(&mut self, sample: MetricSample) -> Result<Vec<GreyNodeFlag>, IngestError> {
        let w = self.agg.config().window_of(sample.timestamp);
        self.agg.push(sample)?;
        // Samples may still land one window back, so keep two open.
        let outputs = self.agg.close_until(w.saturating_sub(1));
        Ok(self.evaluate(&outputs))
    }

    /// Evaluates everything still open.
    pub fn finish(mut self) -> Vec<GreyNodeFlag> {
        let outputs = core::mem::replace(&mut self.agg, WindowAggregator::new(IngestConfig::default())).finish();
        self.evaluate(&outputs)
    }

    fn evaluate(&mut self, outputs: &[WindowOutput]) -> Vec<GreyNodeFlag> {
        let windows: BTreeSet<u64> = outputs
            .iter()
            .filter_map(|o| match o {
                WindowOutput::Stats(s) => Some(s.window_index),
                _ => None,
            })
            .collect();
        let mut flags = Vec::new();
        for w in windows {
            let nodes = reduce_window(outputs, w);
            let baselines = baselines_for(&nodes, w);
            for (node, values) in &nodes {
                let report = evaluate_node(node, w, values, &baselines, &self.cfg);
                let history = self.histories.entry(node.clone()).or_default();
                if let Some(flag) = history.push(report, &self.cfg) {
                    flags.push(flag);
                }
            }
        }
        flags
    }
}

/// Batch form of [`StreamDetector`].
pub fn detect_stream<I>(samples: I, ingest: IngestConfig, cfg: DetectorConfig) -> Result<Vec<GreyNodeFlag>, IngestError>
where
    I: IntoIterator<Item = MetricSample>,
{
    let mut det = StreamDetector::new(ingest, cfg);
    let mut flags = Vec::new();
    for s in samples {
        flags.extend(det.push(s)?);
    }
    flags.extend(det.finish());
    Ok(flags)
}
