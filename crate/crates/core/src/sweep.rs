//! Offline node qualification: single-node compute/NVLink sweep, multi-node
//! step-time sweep against qualified references, and the verdict.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeId, ValidationError, GPUS_PER_NODE};
use crate::rng::{normal, SimRng};
use crate::sim::profile::NodeProfile;
use crate::sim::step::{gate, StepModel};
use crate::sim::thermal::{thermal_freq, NOMINAL_FREQ_GHZ};
use crate::stats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Functional burn-in only: anything that boots passes.
    BurnIn,
    /// Per-GPU throughput only.
    Basic,
    /// Throughput, NVLink bandwidth matrix and the multi-node sweep.
    #[default]
    Enhanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub compute_floor: f64,
    pub link_floor: f64,
    pub step_tolerance: f64,
    pub pair_samples: usize,
    /// Nodes in the multi-node sweep, including the suspect.
    pub width: usize,
    /// A reference must have passed a sweep within this many seconds.
    pub reference_recency_s: f64,
    /// Relative noise on single-node measurements.
    pub measurement_sigma: f64,
    pub single_duration_s: f64,
    pub pair_sync_points: u32,
    /// Calibrated healthy-pair step time.
    pub pair_baseline_s: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mode: SweepMode::Enhanced,
            compute_floor: 0.90,
            link_floor: 0.85,
            step_tolerance: 0.03,
            pair_samples: 30,
            width: 2,
            reference_recency_s: 24.0 * 3600.0,
            measurement_sigma: 0.005,
            single_duration_s: 600.0,
            pair_sync_points: 1,
            pair_baseline_s: 8.4,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.compute_floor > 0.0 && self.compute_floor <= 1.0) {
            return Err(ValidationError::new("compute_floor", "must be in (0, 1]"));
        }
        if !(self.link_floor > 0.0 && self.link_floor <= 1.0) {
            return Err(ValidationError::new("link_floor", "must be in (0, 1]"));
        }
        if !(self.step_tolerance >= 0.0) {
            return Err(ValidationError::new("step_tolerance", "must be non-negative"));
        }
        if self.pair_samples < 30 {
            return Err(ValidationError::new("pair_samples", "need at least 30"));
        }
        if ![2, 4, 8].contains(&self.width) {
            return Err(ValidationError::new("width", "must be 2, 4 or 8"));
        }
        if !(self.pair_baseline_s > 0.0) {
            return Err(ValidationError::new("pair_baseline_s", "must be positive"));
        }
        if self.pair_sync_points == 0 {
            return Err(ValidationError::new("pair_sync_points", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Gpu(u8),
    NvLink(u8, u8),
    Nic(u8),
    Unlocalized,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Gpu(i) => write!(f, "gpu{i}"),
            Component::NvLink(i, j) => write!(f, "nvlink{i}-{j}"),
            Component::Nic(i) => write!(f, "nic{i}"),
            Component::Unlocalized => f.write_str("unlocalized"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleSweepReport {
    pub node: NodeId,
    /// Sustained throughput per GPU, 1.0 = nominal.
    pub per_gpu_throughput: [f64; GPUS_PER_NODE],
    /// Symmetric normalized bandwidth matrix; absent in basic mode.
    pub nvlink_bandwidth: Option<[[f64; GPUS_PER_NODE]; GPUS_PER_NODE]>,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSweepReport {
    pub suspect: NodeId,
    pub reference: NodeId,
    /// Further references when the sweep is wider than two nodes.
    pub extra_references: Vec<NodeId>,
    pub step_times_s: Vec<f64>,
    pub reference_pair_baseline_s: f64,
}

impl PairSweepReport {
    pub fn median_step_s(&self) -> f64 {
        stats::median(&self.step_times_s).unwrap_or(f64::NAN)
    }

    pub fn duration_s(&self) -> f64 {
        self.step_times_s.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepVerdict {
    pub passed: bool,
    pub failing_components: BTreeSet<Component>,
}

impl SweepVerdict {
    pub fn pass() -> Self {
        Self {
            passed: true,
            failing_components: BTreeSet::new(),
        }
    }

    fn from_components(failing_components: BTreeSet<Component>) -> Self {
        Self {
            passed: failing_components.is_empty(),
            failing_components,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SweepError {
    #[error("no qualified reference node available for {0}")]
    ReferenceUnavailable(NodeId),
}

/// Noise-free sustained throughput of each GPU.
pub fn expected_throughput(p: &NodeProfile) -> [f64; GPUS_PER_NODE] {
    let mut out = [0.0; GPUS_PER_NODE];
    let power = 1.0 + p.power_anomaly.unwrap_or(0.0);
    for (g, t) in out.iter_mut().enumerate() {
        *t = thermal_freq(p.steady_temp_c[g]) / NOMINAL_FREQ_GHZ / p.gpu_slowdown[g] / power;
    }
    out
}

#[allow(clippy::needless_range_loop)]
pub fn run_single_node_sweep(
    p: &NodeProfile,
    cfg: &SweepConfig,
    with_nvlink: bool,
    rng: &mut SimRng,
) -> SingleSweepReport {
    let noise = |rng: &mut SimRng| 1.0 + normal(rng, 0.0, cfg.measurement_sigma);
    let mut per_gpu_throughput = expected_throughput(p);
    for t in per_gpu_throughput.iter_mut() {
        *t = (*t * noise(rng)).max(1e-6);
    }
    let nvlink_bandwidth = with_nvlink.then(|| {
        let mut m = [[1.0; GPUS_PER_NODE]; GPUS_PER_NODE];
        for i in 0..GPUS_PER_NODE {
            for j in (i + 1)..GPUS_PER_NODE {
                let v = (p.link_factor(i as u8, j as u8) * noise(rng)).max(1e-6);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    });
    SingleSweepReport {
        node: p.node.clone(),
        per_gpu_throughput,
        nvlink_bandwidth,
        duration_s: cfg.single_duration_s,
    }
}

/// Runs the synchronous step model on the suspect plus `references`
/// (width = 1 + references).
pub fn run_pair_sweep(
    suspect: &NodeProfile,
    references: &[&NodeProfile],
    step: &StepModel,
    cfg: &SweepConfig,
    rng: &mut SimRng,
) -> Result<PairSweepReport, SweepError> {
    let Some((first, rest)) = references.split_first() else {
        return Err(SweepError::ReferenceUnavailable(suspect.node.clone()));
    };
    let mut step_times_s = Vec::with_capacity(cfg.pair_samples);
    let mut contrib = Vec::with_capacity(references.len() + 1);
    for _ in 0..cfg.pair_samples {
        contrib.clear();
        contrib.push((
            &suspect.node,
            step.node_step_contribution(suspect, cfg.pair_sync_points, rng),
        ));
        for r in references {
            contrib.push((&r.node, step.node_step_contribution(r, cfg.pair_sync_points, rng)));
        }
        let (wall, _) = gate(contrib.iter().map(|(n, c)| (*n, *c))).expect("non-empty");
        step_times_s.push(wall);
    }
    Ok(PairSweepReport {
        suspect: suspect.node.clone(),
        reference: first.node.clone(),
        extra_references: rest.iter().map(|r| r.node.clone()).collect(),
        step_times_s,
        reference_pair_baseline_s: cfg.pair_baseline_s,
    })
}

#[allow(clippy::needless_range_loop)]
pub fn judge_sweep(single: &SingleSweepReport, pair: Option<&PairSweepReport>, cfg: &SweepConfig) -> SweepVerdict {
    let mut failing = BTreeSet::new();
    for (g, t) in single.per_gpu_throughput.iter().enumerate() {
        if !(*t >= cfg.compute_floor) {
            failing.insert(Component::Gpu(g as u8));
        }
    }
    if let Some(m) = &single.nvlink_bandwidth {
        for i in 0..GPUS_PER_NODE {
            for j in (i + 1)..GPUS_PER_NODE {
                if !(m[i][j] >= cfg.link_floor) {
                    failing.insert(Component::NvLink(i as u8, j as u8));
                }
            }
        }
    }
    if let Some(pair) = pair {
        let limit = (1.0 + cfg.step_tolerance) * pair.reference_pair_baseline_s;
        if !(pair.median_step_s() <= limit) && failing.is_empty() {
            failing.insert(Component::Unlocalized);
        }
    }
    SweepVerdict::from_components(failing)
}

/// Outcome of a sweep in a given mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub mode: SweepMode,
    pub single: Option<SingleSweepReport>,
    pub pair: Option<PairSweepReport>,
    pub single_passed: bool,
    /// `None` when no multi-node sweep ran.
    pub pair_passed: Option<bool>,
    pub verdict: SweepVerdict,
    pub duration_s: f64,
}

/// Whether the multi-node step time alone is within tolerance.
pub fn pair_within_tolerance(pair: &PairSweepReport, cfg: &SweepConfig) -> bool {
    pair.median_step_s() <= (1.0 + cfg.step_tolerance) * pair.reference_pair_baseline_s
}

/// Runs the sweep the mode calls for. `references` are used only by the
/// enhanced mode and must already be qualified.
pub fn run_sweep(
    suspect: &NodeProfile,
    references: &[&NodeProfile],
    step: &StepModel,
    cfg: &SweepConfig,
    rng: &mut SimRng,
) -> Result<SweepOutcome, SweepError> {
    match cfg.mode {
        SweepMode::BurnIn => Ok(SweepOutcome {
            mode: cfg.mode,
            single: None,
            pair: None,
            single_passed: true,
            pair_passed: None,
            verdict: SweepVerdict::pass(),
            duration_s: cfg.single_duration_s,
        }),
        SweepMode::Basic => {
            let single = run_single_node_sweep(suspect, cfg, false, rng);
            let verdict = judge_sweep(&single, None, cfg);
            Ok(SweepOutcome {
                mode: cfg.mode,
                duration_s: single.duration_s,
                single: Some(single),
                pair: None,
                single_passed: verdict.passed,
                pair_passed: None,
                verdict,
            })
        }
        SweepMode::Enhanced => {
            let single = run_single_node_sweep(suspect, cfg, true, rng);
            let pair = run_pair_sweep(suspect, references, step, cfg, rng)?;
            let verdict = judge_sweep(&single, Some(&pair), cfg);
            let single_passed = judge_sweep(&single, None, cfg).passed;
            let pair_passed = Some(pair_within_tolerance(&pair, cfg));
            Ok(SweepOutcome {
                mode: cfg.mode,
                duration_s: single.duration_s + pair.duration_s(),
                single_passed,
                pair_passed,
                single: Some(single),
                pair: Some(pair),
                verdict,
            })
        }
    }
}
