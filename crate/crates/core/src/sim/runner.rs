//! Scenario execution: the simulated cluster driven through the full loop
//! of ingest, detection, pool policy, sweeps and triage in simulated time.
//!
//! Everything happens at step boundaries. Offline work (repairs, sweeps,
//! triage stages) is scheduled for a due time and takes effect at the first
//! step boundary at or after it, so the event log is ordered by time.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::detector::{
    baselines_for, evaluate_node, reduce_window, JobWatch, NodeHistory, SeverityTier, StepAttribution,
};
use crate::event::Event;
use crate::model::{MetricSample, NodeId, StepTimeRecord, GPUS_PER_NODE};
use crate::policy::{Action, NodePool, PoolStatus, PoolWarning, SweepCause, SweepRequest};
use crate::rng::{exponential, stream, substream, uniform, SimRng, Stream};
use crate::stats::CompensatedSum;
use crate::sweep::{judge_sweep, run_single_node_sweep, run_sweep, SweepMode, SweepOutcome};
use crate::triage::{stage_duration, ErrorSignals, TriageStage, TriageState};
use crate::window::{WindowAggregator, WindowOutput};

use super::metrics::emit_metrics;
use super::profile::{FaultClass, FaultKind, FaultSpec, NodeProfile, NodeTimeline, Remedy};
use super::scenario::{replacement_name, ConfigError, ScenarioConfig};
use super::step::simulate_step;

const HOUR_S: f64 = 3600.0;

/// Ground truth: a fault was active on `node` over `[start_s, end_s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultLabel {
    pub node: NodeId,
    pub class: FaultClass,
    pub fault: FaultKind,
    pub start_s: f64,
    pub end_s: f64,
}

/// `node` took part in the job over `[start_s, end_s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpan {
    pub node: NodeId,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub duration_s: f64,
    pub attempted_steps: u64,
    /// Steps of progress held at the end of the run.
    pub useful_steps: u64,
    pub lost_steps: u64,
    pub crashes: u64,
    pub severe_restarts: u64,
    pub mean_step_s: f64,
    pub nominal_step_s: f64,
    pub window_len_s: f64,
    pub k_windows: usize,
}

impl RunSummary {
    /// Job-impacting incidents: crashes and restarts forced by severe flags.
    pub fn incidents(&self) -> u64 {
        self.crashes + self.severe_restarts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTrace {
    pub job_id: String,
    pub steps: Vec<StepTimeRecord>,
    pub metrics: Vec<MetricSample>,
    pub events: Vec<Event>,
    pub labels: Vec<FaultLabel>,
    pub service: Vec<ServiceSpan>,
    pub summary: RunSummary,
}

#[derive(Clone, Debug)]
enum Task {
    RepairDone(NodeId),
    SweepDone {
        node: NodeId,
        cause: SweepCause,
        outcome: Box<SweepOutcome>,
    },
    RetrySweep(SweepRequest),
    TriageStep(NodeId),
    Provision(NodeId),
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    t: f64,
    pool: NodePool,
    timelines: BTreeMap<NodeId, NodeTimeline>,
    /// Faults waiting for a step index to activate: (attempt, node, fault idx).
    step_onsets: StepOnsets,
    crash_at: BTreeMap<NodeId, f64>,
    escalation_rng: BTreeMap<NodeId, SimRng>,
    jitter_rng: SimRng,
    metrics_rng: SimRng,
    sweep_rng: SimRng,
    agg: WindowAggregator,
    closed_until: u64,
    histories: BTreeMap<NodeId, NodeHistory>,
    closely: BTreeSet<NodeId>,
    last_flag: BTreeMap<NodeId, SeverityTier>,
    job_watch: JobWatch,
    job_windows: BTreeMap<u64, (CompensatedSum, u64)>,
    tasks: Vec<(f64, u64, Task)>,
    task_seq: u64,
    triage: BTreeMap<NodeId, TriageState>,
    last_sweep_cause: BTreeMap<NodeId, SweepCause>,
    qualified_at: BTreeMap<NodeId, f64>,
    warnings_seen: usize,
    events: Vec<Event>,
    steps: Vec<StepTimeRecord>,
    metrics: Vec<MetricSample>,
    service_open: BTreeMap<NodeId, f64>,
    service: Vec<ServiceSpan>,
    next_poll: f64,
    progress: u64,
    committed: u64,
    attempts: u64,
    lost_steps: u64,
    crashes: u64,
    severe_restarts: u64,
    wall_sum: CompensatedSum,
    scratch_samples: Vec<MetricSample>,
    scratch_contrib: Vec<f64>,
    initial_nodes: u64,
    provisioned: usize,
}

/// Faults that activate at a step attempt: (attempt, node, fault index).
pub type StepOnsets = Vec<(u64, NodeId, usize)>;

/// Builds every node's fault timeline: base temperatures, explicit
/// injections and background arrivals.
pub fn build_timelines(cfg: &ScenarioConfig) -> (BTreeMap<NodeId, NodeTimeline>, StepOnsets) {
    let nodes: Vec<NodeId> = cfg.job_nodes().into_iter().chain(cfg.spare_nodes()).collect();
    let mut timelines = BTreeMap::new();
    for (ordinal, node) in nodes.iter().enumerate() {
        timelines.insert(node.clone(), node_timeline(cfg, node, ordinal as u64, 0.0));
    }
    let mut step_onsets = Vec::new();
    for f in &cfg.faults {
        let tl = timelines.get_mut(&f.node).expect("validated");
        let onset_s = f.onset_s.unwrap_or(f64::INFINITY);
        tl.faults.push(FaultSpec {
            kind: f.fault,
            onset_s,
            cleared_s: f.cleared_s,
        });
        if let Some(step) = f.onset_step {
            step_onsets.push((step, f.node.clone(), tl.faults.len() - 1));
        }
    }
    (timelines, step_onsets)
}

/// Timeline of one node that comes online at `start_s`: base temperatures
/// and background fault arrivals drawn from the node's own substreams.
pub fn node_timeline(cfg: &ScenarioConfig, node: &NodeId, ordinal: u64, start_s: f64) -> NodeTimeline {
    let mut temps_rng = substream(cfg.seed, Stream::BaseTemps, ordinal);
    let mut temps = [0.0; GPUS_PER_NODE];
    for t in temps.iter_mut() {
        *t = uniform(&mut temps_rng, cfg.base_temp_c.0, cfg.base_temp_c.1);
    }
    let mut tl = NodeTimeline::new(node.clone(), temps);
    let rate = cfg.background.rate_per_node_h;
    if rate > 0.0 {
        let horizon = cfg.fault_horizon_s();
        let mut rng = substream(cfg.seed, Stream::FaultMix, ordinal);
        let mut t = start_s;
        loop {
            t += exponential(&mut rng, HOUR_S / rate);
            if t >= horizon {
                break;
            }
            let kind = draw_fault(&cfg.background.mix, &mut rng);
            tl.faults.push(FaultSpec {
                kind,
                onset_s: t,
                cleared_s: None,
            });
        }
    }
    tl
}

/// Draws one fault from a mix.
pub fn draw_fault(mix: &super::scenario::FaultMix, rng: &mut SimRng) -> FaultKind {
    let total = mix.total_weight();
    let mut u = uniform(rng, 0.0, total);
    let mut class = FaultClass::DriverFault;
    for c in FaultClass::ALL {
        let w = mix.entry(c).weight;
        if u < w {
            class = c;
            break;
        }
        u -= w;
    }
    let e = mix.entry(class);
    let param = uniform(rng, e.lo, e.hi);
    let gpu = (uniform(rng, 0.0, GPUS_PER_NODE as f64) as u8).min(GPUS_PER_NODE as u8 - 1);
    let other = {
        let off = (uniform(rng, 1.0, GPUS_PER_NODE as f64) as u8).clamp(1, GPUS_PER_NODE as u8 - 1);
        (gpu + off) % GPUS_PER_NODE as u8
    };
    match class {
        FaultClass::Thermal => FaultKind::Thermal { gpu, temp_c: param },
        FaultClass::CpuMisconfig => FaultKind::CpuMisconfig { factor: param },
        FaultClass::NicFailover => FaultKind::NicFailover {
            failed_nic: gpu,
            fallback_nic: other,
        },
        FaultClass::PowerAnomaly => FaultKind::PowerAnomaly { fraction: param },
        FaultClass::NvlinkDegrade => FaultKind::NvlinkDegrade {
            a: gpu.min(other),
            b: gpu.max(other),
            factor: param,
        },
        FaultClass::DriverFault => FaultKind::DriverFault { gpu, slowdown: param },
    }
}

/// Runs a scenario to its horizon.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioTrace, ConfigError> {
    cfg.validate()?;
    let (timelines, step_onsets) = build_timelines(cfg);
    let mut sim = Sim::new(cfg, timelines, step_onsets);
    sim.run();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, timelines: BTreeMap<NodeId, NodeTimeline>, step_onsets: StepOnsets) -> Self {
        let escalation_rng = cfg
            .job_nodes()
            .into_iter()
            .chain(cfg.spare_nodes())
            .enumerate()
            .map(|(i, n)| (n, substream(cfg.seed, Stream::Escalation, i as u64)))
            .collect();
        let qualified_at = timelines.keys().map(|n| (n.clone(), 0.0)).collect();
        Self {
            cfg,
            t: 0.0,
            pool: NodePool::new(cfg.job_nodes(), cfg.spare_nodes()),
            timelines,
            step_onsets,
            crash_at: BTreeMap::new(),
            escalation_rng,
            jitter_rng: stream(cfg.seed, Stream::Jitter),
            metrics_rng: stream(cfg.seed, Stream::Metrics),
            sweep_rng: stream(cfg.seed, Stream::Sweep),
            agg: WindowAggregator::new(cfg.ingest),
            closed_until: 0,
            histories: BTreeMap::new(),
            closely: BTreeSet::new(),
            last_flag: BTreeMap::new(),
            job_watch: JobWatch::default(),
            job_windows: BTreeMap::new(),
            tasks: Vec::new(),
            task_seq: 0,
            triage: BTreeMap::new(),
            last_sweep_cause: BTreeMap::new(),
            qualified_at,
            warnings_seen: 0,
            events: Vec::new(),
            steps: Vec::new(),
            metrics: Vec::new(),
            service_open: BTreeMap::new(),
            service: Vec::new(),
            next_poll: 0.0,
            progress: 0,
            committed: 0,
            attempts: 0,
            lost_steps: 0,
            crashes: 0,
            severe_restarts: 0,
            wall_sum: CompensatedSum::default(),
            scratch_samples: Vec::new(),
            scratch_contrib: Vec::new(),
            initial_nodes: (cfg.node_count + cfg.spare_count) as u64,
            provisioned: 0,
        }
    }

    fn horizon_reached(&self) -> bool {
        self.attempts >= self.cfg.horizon_steps || self.cfg.horizon_s.is_some_and(|h| self.t >= h)
    }

    fn run(&mut self) {
        while !self.horizon_reached() {
            self.run_due_tasks();
            self.activate_step_onsets();
            self.checkpoint();
            self.sync_service();
            if self.pool.serving().is_empty() {
                if !self.idle_until_next_task() {
                    break;
                }
                continue;
            }
            self.arm_escalations();
            let end = self.step();
            self.t = end;
            self.close_windows();
            self.check_crash();
            self.start_sweeps();
            self.start_triage();
        }
        self.sync_service();
    }

    fn schedule(&mut self, due: f64, task: Task) {
        self.task_seq += 1;
        self.tasks.push((due, self.task_seq, task));
    }

    fn run_due_tasks(&mut self) {
        loop {
            let next = self
                .tasks
                .iter()
                .enumerate()
                .filter(|(_, (due, _, _))| *due <= self.t)
                .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.1 .1.cmp(&b.1 .1)))
                .map(|(i, _)| i);
            let Some(i) = next else { break };
            let (_, _, task) = self.tasks.swap_remove(i);
            self.run_task(task);
        }
        self.start_sweeps();
        self.start_triage();
    }

    /// With no one serving, jump to the next scheduled task. Returns false
    /// when nothing is left to wait for.
    fn idle_until_next_task(&mut self) -> bool {
        if let Some(n) = self.pool.draw_for_job(self.t) {
            let _ = n;
            self.flush_pool();
            return true;
        }
        let Some(due) = self.tasks.iter().map(|(d, _, _)| *d).min_by(f64::total_cmp) else {
            return false;
        };
        self.t = self.t.max(due);
        if let Some(h) = self.cfg.horizon_s {
            self.t = self.t.min(h);
        }
        true
    }

    fn activate_step_onsets(&mut self) {
        let attempts = self.attempts;
        let t = self.t;
        for (step, node, idx) in self.step_onsets.iter() {
            if *step == attempts {
                if let Some(tl) = self.timelines.get_mut(node) {
                    tl.faults[*idx].onset_s = t;
                }
            }
        }
    }

    fn profile(&self, node: &NodeId) -> NodeProfile {
        self.timelines[node].profile_at(self.t)
    }

    fn push_event(&mut self, e: Event) {
        debug_assert!(self.events.last().is_none_or(|l| l.t() <= e.t()));
        self.events.push(e);
    }

    /// Logs pool transitions and warnings produced since the last flush.
    fn flush_pool(&mut self) {
        for r in self.pool.take_log() {
            if r.to == PoolStatus::Terminated {
                if let Some(d) = self.cfg.replacement_delay_s {
                    self.schedule(r.t + d, Task::Provision(r.node.clone()));
                }
            }
            self.push_event(Event::Transition {
                node: r.node,
                from: r.from,
                to: r.to,
                action: r.action.to_string(),
                t: r.t,
            });
        }
        let new: Vec<PoolWarning> = self.pool.warnings()[self.warnings_seen..].to_vec();
        self.warnings_seen = self.pool.warnings().len();
        for w in new {
            match w {
                PoolWarning::SpareExhausted { node, t } => self.push_event(Event::SpareExhausted { node, t }),
            }
        }
        self.sync_service();
    }

    /// Opens and closes service spans to match the pool's serving set.
    fn sync_service(&mut self) {
        let serving = self.pool.serving().clone();
        let gone: Vec<NodeId> = self
            .service_open
            .keys()
            .filter(|n| !serving.contains(*n))
            .cloned()
            .collect();
        for n in gone {
            let start = self.service_open.remove(&n).expect("open");
            self.crash_at.remove(&n);
            self.histories.remove(&n);
            self.closely.remove(&n);
            self.last_flag.remove(&n);
            self.service.push(ServiceSpan {
                node: n,
                start_s: start,
                end_s: self.t,
            });
        }
        for n in serving {
            self.service_open.entry(n).or_insert(self.t);
        }
    }

    fn arm_escalations(&mut self) {
        let t = self.t;
        let esc = self.cfg.escalation;
        let serving: Vec<NodeId> = self.pool.serving().iter().cloned().collect();
        for n in serving {
            if self.crash_at.contains_key(&n) {
                continue;
            }
            let escalating = self.timelines[&n].active(t).any(|f| f.kind.escalates());
            if escalating {
                let rng = self.escalation_rng.get_mut(&n).expect("known node");
                let delay = (esc.min_h + exponential(rng, esc.mean_h)) * HOUR_S;
                self.crash_at.insert(n, t + delay);
            }
        }
    }

    fn checkpoint(&mut self) {
        let c = self.cfg.checkpoint_interval_steps;
        if self.progress == 0 || !self.progress.is_multiple_of(c) || self.progress <= self.committed {
            return;
        }
        self.committed = self.progress;
        if !self.cfg.features.remediation {
            return;
        }
        let deferred: Vec<NodeId> = self.pool.deferred().iter().cloned().collect();
        for node in deferred {
            let Ok(replacement) = self.pool.checkpoint_swap(&node, self.t) else {
                continue;
            };
            self.push_event(Event::CheckpointSwap {
                node: node.clone(),
                replacement,
                step: self.progress,
                t: self.t,
            });
            self.flush_pool();
            self.strike(&node);
        }
        while self.pool.serving().len() < self.cfg.node_count {
            if self.pool.draw_for_job(self.t).is_none() {
                break;
            }
        }
        self.flush_pool();
    }

    fn step(&mut self) -> f64 {
        let members: Vec<NodeId> = self.pool.serving().iter().cloned().collect();
        let profiles: Vec<NodeProfile> = members.iter().map(|n| self.profile(n)).collect();
        let refs: Vec<&NodeProfile> = profiles.iter().collect();
        let sync = self.cfg.job.sync_points_per_step;
        let mut contrib = core::mem::take(&mut self.scratch_contrib);
        let rec = simulate_step(
            &self.cfg.job.job_id,
            self.progress,
            &refs,
            &self.cfg.step,
            sync,
            &mut self.jitter_rng,
            &mut contrib,
        );
        let start = self.t;
        let end = start + rec.wall_time_s;
        self.wall_sum.add(rec.wall_time_s);
        let monitoring = self.cfg.features.online_monitoring;
        let record = self.cfg.features.record_metrics;
        if monitoring || record {
            let mut samples = core::mem::take(&mut self.scratch_samples);
            samples.clear();
            let interval = self.cfg.metrics.poll_interval_s;
            if self.next_poll < start {
                self.next_poll = libm::ceil(start / interval) * interval;
            }
            while self.next_poll <= end {
                for p in &profiles {
                    emit_metrics(
                        p,
                        self.next_poll,
                        &self.cfg.metrics,
                        &self.cfg.step,
                        sync,
                        &mut self.metrics_rng,
                        &mut samples,
                    );
                }
                self.next_poll += interval;
            }
            if self.cfg.detector.attribution == StepAttribution::PerNode {
                for (n, c) in members.iter().zip(contrib.iter()) {
                    samples.push(MetricSample::step(n.clone(), self.cfg.job.job_id.clone(), end, *c));
                }
            }
            for s in samples.drain(..) {
                if monitoring {
                    let r = self.agg.push(s.clone());
                    debug_assert!(r.is_ok(), "{r:?}");
                }
                if record {
                    self.metrics.push(s);
                }
            }
            self.scratch_samples = samples;
        }
        if monitoring && self.cfg.detector.attribution == StepAttribution::JobOnly {
            let w = self.cfg.ingest.window_of(end);
            let e = self.job_windows.entry(w).or_insert((CompensatedSum::default(), 0));
            e.0.add(rec.wall_time_s);
            e.1 += 1;
        }
        self.scratch_contrib = contrib;
        self.steps.push(rec);
        self.progress += 1;
        self.attempts += 1;
        end
    }

    fn close_windows(&mut self) {
        if !self.cfg.features.online_monitoring {
            return;
        }
        let w_now = self.cfg.ingest.window_of(self.t);
        if w_now <= self.closed_until {
            return;
        }
        self.closed_until = w_now;
        let outputs = self.agg.close_until(w_now);
        self.job_windows_through(w_now);
        let windows: BTreeSet<u64> = outputs
            .iter()
            .filter_map(|o| match o {
                WindowOutput::Stats(s) => Some(s.window_index),
                _ => None,
            })
            .collect();
        let mut restarts: Vec<(NodeId, NodeId)> = Vec::new();
        for w in windows {
            let mut nodes = reduce_window(&outputs, w);
            nodes.retain(|n, v| self.pool.is_serving(n) && (!v.values.is_empty() || !v.gaps.is_empty()));
            if nodes.is_empty() {
                continue;
            }
            let baselines = baselines_for(&nodes, w);
            for (node, values) in &nodes {
                if !self.pool.is_serving(node) {
                    continue;
                }
                let dcfg = if self.closely.contains(node) {
                    self.cfg.detector.monitored_closely()
                } else {
                    self.cfg.detector
                };
                let report = evaluate_node(node, w, values, &baselines, &dcfg);
                let flag = self.histories.entry(node.clone()).or_default().push(report, &dcfg);
                if let Some(flag) = flag {
                    restarts.extend(self.handle_flag(flag));
                }
            }
        }
        if !restarts.is_empty() {
            let mut lost = self.progress - self.committed;
            for (node, replacement) in restarts {
                self.push_event(Event::Restart {
                    node,
                    replacement: Some(replacement),
                    cause: "severe_flag".to_string(),
                    lost_steps: lost,
                    t: self.t,
                });
                lost = 0;
            }
            self.severe_restarts += 1;
            self.restart(self.cfg.restart_overhead_s);
        }
    }

    fn job_windows_through(&mut self, w_now: u64) {
        let done: Vec<u64> = self.job_windows.range(..w_now).map(|(w, _)| *w).collect();
        for w in done {
            let (sum, n) = self.job_windows.remove(&w).expect("present");
            let mean = sum.value() / n as f64;
            if let Some(severity) = self.job_watch.push(mean, &self.cfg.detector) {
                self.push_event(Event::JobFlag {
                    job: self.cfg.job.job_id.clone(),
                    window: w,
                    severity,
                    t: self.t,
                });
            }
        }
    }

    /// Returns the (node, replacement) pair when the flag calls for an
    /// immediate restart.
    fn handle_flag(&mut self, flag: crate::detector::GreyNodeFlag) -> Option<(NodeId, NodeId)> {
        let node = flag.node.clone();
        let event = Event::Flag {
            node: node.clone(),
            window: flag.window,
            severity: flag.severity,
            kinds: flag.kinds,
            first_window: flag.first_window,
            t: self.t,
        };
        if !self.cfg.features.remediation {
            self.push_event(event);
            return None;
        }
        if self.pool.status(&node) == Some(PoolStatus::PendingVerification)
            && self.last_flag.get(&node).is_some_and(|s| *s >= flag.severity)
        {
            return None;
        }
        self.push_event(event);
        self.last_flag.insert(node.clone(), flag.severity);
        let Ok(action) = self.pool.apply_verdict(&node, Some(flag.severity), self.t) else {
            return None;
        };
        self.flush_pool();
        match action {
            Action::MonitorClosely => {
                self.closely.insert(node);
                None
            }
            Action::ImmediateRestartWithReplacement { node, replacement } => {
                self.strike(&node);
                Some((node, replacement))
            }
            Action::DeferToCheckpoint { .. } | Action::None => None,
        }
    }

    /// Rolls the job back to its last checkpoint and pays `overhead_s`.
    fn restart(&mut self, overhead_s: f64) {
        let lost = self.progress - self.committed;
        self.lost_steps += lost;
        self.progress = self.committed;
        self.t += overhead_s;
    }

    fn check_crash(&mut self) {
        let t = self.t;
        let due = self
            .crash_at
            .iter()
            .filter(|(n, at)| **at <= t && self.pool.is_serving(n))
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
            .map(|(n, _)| n.clone());
        let Some(node) = due else { return };
        self.crash_at.remove(&node);
        self.crashes += 1;
        self.push_event(Event::Crash { node: node.clone(), t });
        let replacement = self.pool.on_crash(&node, t).ok().flatten();
        self.flush_pool();
        let lost = self.progress - self.committed;
        self.push_event(Event::Restart {
            node: node.clone(),
            replacement,
            cause: "crash".to_string(),
            lost_steps: lost,
            t,
        });
        self.restart(self.cfg.crash_recovery_s);
        self.strike(&node);
        self.schedule(t + self.cfg.repair_s, Task::RepairDone(node));
    }

    /// Records a removal from service as a strike; enough strikes inside the
    /// window get the node terminated by an operator.
    fn strike(&mut self, node: &NodeId) {
        let t = self.t;
        let tcfg = self.cfg.triage;
        let state = self
            .triage
            .entry(node.clone())
            .or_insert_with(|| TriageState::new(node.clone()));
        let next = state.record_strike(t, &tcfg);
        let count = next.strikes_within(t, &tcfg);
        let forced = next.stage == TriageStage::Terminate;
        *state = next;
        self.push_event(Event::Strike {
            node: node.clone(),
            strikes_in_window: count,
            t,
        });
        if forced && self.pool.status(node).is_some_and(|s| s != PoolStatus::Terminated) {
            let reason = "repeat offender";
            if self.pool.manual_terminate(node, reason, t).is_ok() {
                self.push_event(Event::ManualTerminate {
                    node: node.clone(),
                    reason: reason.to_string(),
                    t,
                });
                self.flush_pool();
            }
        }
    }

    fn run_task(&mut self, task: Task) {
        let t = self.t;
        match task {
            Task::RepairDone(node) => {
                if self.pool.status(&node) != Some(PoolStatus::Quarantined) {
                    return;
                }
                self.timelines
                    .get_mut(&node)
                    .expect("known")
                    .apply_remedy(Remedy::Reboot, t);
                self.push_event(Event::ManualRepair { node: node.clone(), t });
                let _ = self.pool.on_repaired(&node, t);
            }
            Task::RetrySweep(req) => {
                if self.pool.status(&req.node).is_some_and(|s| s != PoolStatus::Terminated) {
                    self.pool.requeue_sweep(req);
                }
            }
            Task::SweepDone { node, cause, outcome } => {
                if self.pool.status(&node) == Some(PoolStatus::Terminated) {
                    return;
                }
                let passed = outcome.verdict.passed;
                self.push_event(Event::Sweep {
                    node: node.clone(),
                    mode: outcome.mode,
                    reference: outcome.pair.as_ref().map(|p| p.reference.clone()),
                    single_passed: outcome.single_passed,
                    pair_passed: outcome.pair_passed,
                    passed,
                    components: outcome.verdict.failing_components.iter().copied().collect(),
                    t,
                });
                if passed {
                    self.qualified_at.insert(node.clone(), t);
                }
                self.last_sweep_cause.insert(node.clone(), cause);
                if self.pool.on_sweep_result(&node, passed, t).is_ok() {
                    self.flush_pool();
                }
            }
            Task::Provision(replaces) => {
                let ordinal = self.initial_nodes + self.provisioned as u64;
                let node = replacement_name(self.provisioned);
                self.provisioned += 1;
                let tl = node_timeline(self.cfg, &node, ordinal, t);
                self.timelines.insert(node.clone(), tl);
                self.escalation_rng
                    .insert(node.clone(), substream(self.cfg.seed, Stream::Escalation, ordinal));
                self.qualified_at.insert(node.clone(), t);
                if self.pool.add_spare(node.clone()).is_ok() {
                    self.push_event(Event::Provisioned { node, replaces, t });
                }
            }
            Task::TriageStep(node) => {
                if self.pool.status(&node) != Some(PoolStatus::Quarantined) {
                    return;
                }
                let stage = self.triage.get(&node).map(|s| s.stage);
                let remedy = match stage {
                    Some(TriageStage::RebootRedeployDrivers) => Remedy::Reboot,
                    Some(TriageStage::Reprovision) => Remedy::Reprovision,
                    _ => return,
                };
                self.timelines.get_mut(&node).expect("known").apply_remedy(remedy, t);
                self.advance_triage(&node);
            }
        }
    }

    fn start_sweeps(&mut self) {
        if !self.cfg.features.remediation {
            while self.pool.next_sweep().is_some() {}
            return;
        }
        while let Some(req) = self.pool.next_sweep() {
            if self.pool.status(&req.node) == Some(PoolStatus::Terminated) {
                continue;
            }
            let profile = self.profile(&req.node);
            let references = if self.cfg.sweep.mode == SweepMode::Enhanced {
                match self.pick_references(&req.node) {
                    Some(r) => r,
                    None => {
                        self.push_event(Event::SweepDeferred {
                            node: req.node.clone(),
                            reason: "no qualified reference".to_string(),
                            t: self.t,
                        });
                        self.schedule(self.t + self.cfg.sweep_retry_s, Task::RetrySweep(req));
                        continue;
                    }
                }
            } else {
                Vec::new()
            };
            let ref_profiles: Vec<NodeProfile> = references.iter().map(|n| self.profile(n)).collect();
            let refs: Vec<&NodeProfile> = ref_profiles.iter().collect();
            let Ok(outcome) = run_sweep(&profile, &refs, &self.cfg.step, &self.cfg.sweep, &mut self.sweep_rng) else {
                continue;
            };
            let due = self.t + outcome.duration_s;
            self.schedule(
                due,
                Task::SweepDone {
                    node: req.node,
                    cause: req.cause,
                    outcome: Box::new(outcome),
                },
            );
        }
    }

    /// Qualified references for a multi-node sweep: idle healthy nodes and
    /// unused spares that passed a sweep recently. Stale candidates are
    /// requalified with a single-node sweep first.
    fn pick_references(&mut self, suspect: &NodeId) -> Option<Vec<NodeId>> {
        let need = self.cfg.sweep.width - 1;
        let candidates: Vec<NodeId> = self
            .pool
            .idle()
            .chain(self.pool.spares())
            .filter(|n| *n != suspect)
            .cloned()
            .collect();
        let recency = self.cfg.sweep.reference_recency_s;
        let mut chosen = Vec::new();
        for n in candidates.iter() {
            if chosen.len() == need {
                break;
            }
            if self.qualified_at.get(n).is_some_and(|q| self.t - q <= recency) {
                chosen.push(n.clone());
            }
        }
        for n in candidates.iter() {
            if chosen.len() == need {
                break;
            }
            if chosen.contains(n) {
                continue;
            }
            let p = self.profile(n);
            let single = run_single_node_sweep(&p, &self.cfg.sweep, true, &mut self.sweep_rng);
            if judge_sweep(&single, None, &self.cfg.sweep).passed {
                self.qualified_at.insert(n.clone(), self.t);
                chosen.push(n.clone());
            }
        }
        (chosen.len() == need).then_some(chosen)
    }

    fn start_triage(&mut self) {
        if !self.cfg.features.remediation {
            while self.pool.next_ticket().is_some() {}
            return;
        }
        while let Some(node) = self.pool.next_ticket() {
            if self.pool.status(&node) != Some(PoolStatus::Quarantined) {
                continue;
            }
            let t = self.t;
            self.push_event(Event::TriageTicket { node: node.clone(), t });
            let state = self
                .triage
                .entry(node.clone())
                .or_insert_with(|| TriageState::new(node.clone()));
            if state.reopen().is_err() {
                continue;
            }
            if self.last_sweep_cause.get(&node) == Some(&SweepCause::Triage) {
                self.strike(&node);
                if self.pool.status(&node) != Some(PoolStatus::Quarantined) {
                    continue;
                }
            }
            self.advance_triage(&node);
        }
    }

    /// Observes the node's error signals and takes one workflow edge.
    fn advance_triage(&mut self, node: &NodeId) {
        let t = self.t;
        let errors = self.profile(node).emits_errors();
        let tcfg = self.cfg.triage;
        let state = self.triage.get_mut(node).expect("open triage");
        let Ok(next) = state.step(ErrorSignals::new(errors), &tcfg) else {
            return;
        };
        let from = state.stage;
        let to = next.stage;
        *state = next;
        self.push_event(Event::Triage {
            node: node.clone(),
            from,
            to,
            errors,
            t,
        });
        match to {
            TriageStage::Terminate => {
                let _ = self.pool.on_triage_outcome(node, true, t);
                self.flush_pool();
            }
            TriageStage::ReturnForSweep => {
                let _ = self.pool.on_triage_outcome(node, false, t);
                self.flush_pool();
            }
            TriageStage::RebootRedeployDrivers | TriageStage::Reprovision => {
                let due = t + stage_duration(to, &tcfg);
                self.schedule(due, Task::TriageStep(node.clone()));
            }
            TriageStage::Quarantined => {}
        }
    }

    fn finish(mut self) -> ScenarioTrace {
        let end = self.t;
        for (node, start) in core::mem::take(&mut self.service_open) {
            self.service.push(ServiceSpan {
                node,
                start_s: start,
                end_s: end,
            });
        }
        self.service
            .sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then_with(|| a.node.cmp(&b.node)));
        let mut labels = Vec::new();
        for tl in self.timelines.values() {
            for f in &tl.faults {
                if f.onset_s < end {
                    labels.push(FaultLabel {
                        node: tl.node.clone(),
                        class: f.kind.class(),
                        fault: f.kind,
                        start_s: f.onset_s,
                        end_s: f.cleared_s.map_or(end, |c| c.min(end)),
                    });
                }
            }
        }
        labels.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then_with(|| a.node.cmp(&b.node)));
        let n_steps = self.steps.len();
        let summary = RunSummary {
            seed: self.cfg.seed,
            duration_s: end,
            attempted_steps: self.attempts,
            useful_steps: self.progress,
            lost_steps: self.lost_steps,
            crashes: self.crashes,
            severe_restarts: self.severe_restarts,
            mean_step_s: if n_steps == 0 {
                0.0
            } else {
                self.wall_sum.value() / n_steps as f64
            },
            nominal_step_s: self.cfg.step.nominal_time_s,
            window_len_s: self.cfg.ingest.window_len_s,
            k_windows: self.cfg.detector.k_windows,
        };
        ScenarioTrace {
            job_id: self.cfg.job.job_id.clone(),
            steps: self.steps,
            metrics: self.metrics,
            events: self.events,
            labels,
            service: self.service,
            summary,
        }
    }
}
