//! Multi-run studies: the four-arm ablation, run-to-run variance, and the
//! labeled detection corpus.

use std::collections::BTreeMap;

use guard_core::eval::{
    ablation_rows, flag_times, node_intervals, score_intervals, variance_pct, AblationArm, AblationRow, EvalResult,
    HumanCosts, NodeInterval, Reliability,
};
use guard_core::model::NodeId;
use guard_core::rng::{substream, uniform, Stream};
use guard_core::sim::runner::draw_fault;
use guard_core::sim::scenario::node_name;
use guard_core::sim::{run_scenario, ConfigError, FaultInjection, ScenarioConfig, ScenarioTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const HOUR_S: f64 = 3600.0;

/// The scenario the ablation and variance studies run by default: a
/// 32-node job with 8 spares over one simulated week, with background
/// faults from the default mix.
pub fn ablation_base() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        node_count: 32,
        spare_count: 8,
        horizon_steps: 1_000_000,
        horizon_s: Some(168.0 * HOUR_S),
        ..ScenarioConfig::default()
    };
    cfg.job.sync_points_per_step = 4;
    cfg.background.rate_per_node_h = 0.005;
    cfg.metrics.poll_interval_s = 60.0;
    cfg.features.record_metrics = false;
    cfg
}

/// Runs every config, in parallel, keeping input order.
pub fn run_all(cfgs: &[ScenarioConfig]) -> Result<Vec<ScenarioTrace>, ConfigError> {
    cfgs.par_iter().map(run_scenario).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub arm: AblationArm,
    pub seed: u64,
    pub reliability: Reliability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn run(&self, arm: AblationArm, seed: u64) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed)
    }

    /// Seeds for which MTTF rises and operator time falls strictly from
    /// each arm to the next.
    pub fn ordered_seeds(&self) -> BTreeMap<u64, (bool, bool)> {
        let seeds: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        let mut out = BTreeMap::new();
        for seed in seeds {
            let rs: Option<Vec<&Reliability>> = AblationArm::ALL
                .iter()
                .map(|a| self.run(*a, seed).map(|r| &r.reliability))
                .collect();
            let Some(rs) = rs else { continue };
            let mttf = rs.windows(2).all(|w| w[0].mttf_h < w[1].mttf_h);
            let human = rs.windows(2).all(|w| w[0].human_interval_h > w[1].human_interval_h);
            out.insert(seed, (mttf, human));
        }
        out
    }
}

/// Runs every arm on every seed and averages per arm.
pub fn run_ablation(base: &ScenarioConfig, seeds: &[u64], costs: &HumanCosts) -> Result<AblationReport, ConfigError> {
    let jobs: Vec<(AblationArm, u64)> = seeds
        .iter()
        .flat_map(|s| AblationArm::ALL.iter().map(move |a| (*a, *s)))
        .collect();
    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|(arm, seed)| {
            let mut cfg = arm.configure(base);
            cfg.seed = *seed;
            let trace = run_scenario(&cfg)?;
            Ok(AblationRun {
                arm: *arm,
                seed: *seed,
                reliability: guard_core::eval::eval_reliability(&trace, costs),
            })
        })
        .collect::<Result<_, ConfigError>>()?;
    let triples: Vec<(AblationArm, u64, Reliability)> =
        runs.iter().map(|r| (r.arm, r.seed, r.reliability.clone())).collect();
    Ok(AblationReport {
        rows: ablation_rows(&triples),
        runs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceStudy {
    pub seeds: Vec<u64>,
    /// Per-seed mean step time with online detection off.
    pub detection_off: Vec<f64>,
    /// Per-seed mean step time with the full loop.
    pub full_loop: Vec<f64>,
    pub off_pct: f64,
    pub on_pct: f64,
}

/// Run-to-run variance of mean step time with online detection off and on.
/// Everything else (sweeps, triage, repairs) stays as in `base`.
pub fn variance_study(base: &ScenarioConfig, seeds: &[u64]) -> Result<VarianceStudy, ConfigError> {
    let cfgs: Vec<ScenarioConfig> = [false, true]
        .iter()
        .flat_map(|on| {
            seeds.iter().map(move |s| {
                let mut c = base.clone();
                c.seed = *s;
                c.features.online_monitoring = *on;
                c.features.remediation = true;
                c
            })
        })
        .collect();
    let means: Vec<f64> = run_all(&cfgs)?.iter().map(|t| t.summary.mean_step_s).collect();
    let (off, on) = means.split_at(seeds.len());
    Ok(VarianceStudy {
        seeds: seeds.to_vec(),
        off_pct: variance_pct(off),
        on_pct: variance_pct(on),
        detection_off: off.to_vec(),
        full_loop: on.to_vec(),
    })
}

/// Nodes per corpus run, and how many of them get a fault.
pub const CORPUS_NODES: usize = 32;
pub const CORPUS_FAULTY: usize = 8;
const CORPUS_STEPS: u64 = 240;
const CORPUS_ONSET: (f64, f64) = (20.0, 120.0);

/// One corpus run: a job with no spares and remediation off, so flagged
/// nodes stay in place, and faults from the default mix on a few nodes.
pub fn corpus_config(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        seed,
        node_count: CORPUS_NODES,
        spare_count: 0,
        horizon_steps: CORPUS_STEPS,
        ..ScenarioConfig::default()
    };
    cfg.features.remediation = false;
    cfg.features.record_metrics = false;
    let mut rng = substream(seed, Stream::Corpus, 0);
    let mut nodes: Vec<usize> = (0..CORPUS_NODES).collect();
    for i in 0..CORPUS_FAULTY {
        let j = i + (uniform(&mut rng, 0.0, (CORPUS_NODES - i) as f64) as usize).min(CORPUS_NODES - i - 1);
        nodes.swap(i, j);
    }
    let mix = cfg.background.mix;
    for &n in &nodes[..CORPUS_FAULTY] {
        let fault = draw_fault(&mix, &mut rng);
        let onset = uniform(&mut rng, CORPUS_ONSET.0, CORPUS_ONSET.1) as u64;
        cfg.faults.push(FaultInjection {
            node: node_name(n),
            fault,
            onset_step: Some(onset),
            onset_s: None,
            cleared_s: None,
        });
    }
    cfg
}

/// Labeled node-intervals and flag times pooled over corpus runs. Node ids
/// are prefixed with the run index so runs do not collide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub intervals: Vec<NodeInterval>,
    pub flags: BTreeMap<NodeId, Vec<f64>>,
    pub runs: usize,
    pub grace_s: f64,
    pub window_len_s: f64,
}

impl Corpus {
    pub fn evaluate(&self) -> EvalResult {
        score_intervals(&self.intervals, &self.flags, self.grace_s, self.window_len_s)
    }
}

fn namespaced(run: usize, node: &NodeId) -> NodeId {
    NodeId::new(format!("c{run:04}/{node}")).expect("non-empty")
}

/// Runs corpus scenarios (seeds `base_seed`, `base_seed + 1`, ...) until
/// `positives` faulty and `negatives` healthy intervals are collected, and
/// keeps exactly that many of each, in run order.
pub fn build_corpus(base_seed: u64, positives: usize, negatives: usize) -> Result<Corpus, ConfigError> {
    const BATCH: usize = 16;
    let mut corpus = Corpus {
        intervals: Vec::new(),
        flags: BTreeMap::new(),
        runs: 0,
        grace_s: 0.0,
        window_len_s: 0.0,
    };
    let (mut pos, mut neg) = (0, 0);
    while pos < positives || neg < negatives {
        let cfgs: Vec<ScenarioConfig> = (0..BATCH)
            .map(|i| corpus_config(base_seed + (corpus.runs + i) as u64))
            .collect();
        let traces = run_all(&cfgs)?;
        for trace in traces {
            if pos >= positives && neg >= negatives {
                break;
            }
            let run = corpus.runs;
            corpus.runs += 1;
            corpus.grace_s = trace.summary.k_windows as f64 * trace.summary.window_len_s;
            corpus.window_len_s = trace.summary.window_len_s;
            for mut iv in node_intervals(&trace) {
                let keep = if iv.faulty {
                    pos < positives && {
                        pos += 1;
                        true
                    }
                } else {
                    neg < negatives && {
                        neg += 1;
                        true
                    }
                };
                if keep {
                    iv.node = namespaced(run, &iv.node);
                    corpus.intervals.push(iv);
                }
            }
            for (node, times) in flag_times(&trace.events) {
                corpus.flags.insert(namespaced(run, &node), times);
            }
        }
    }
    Ok(corpus)
}
