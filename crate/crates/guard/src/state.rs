//! Persistent operator state for the `sweep`, `triage` and `terminate`
//! subcommands: the node pool, per-node triage state, and an append-only
//! event log, all kept in one directory.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use guard_core::event::Event;
use guard_core::model::NodeId;
use guard_core::policy::{NodePool, PolicyError, PoolStatus};
use guard_core::sim::ScenarioConfig;
use guard_core::sweep::SweepOutcome;
use guard_core::triage::{ErrorSignals, TriageConfig, TriageError, TriageStage, TriageState};

use crate::error::{GuardError, Result};
use crate::trace::read_events;

pub struct OperatorState {
    dir: PathBuf,
    pub pool: NodePool,
    pub triage: BTreeMap<NodeId, TriageState>,
    /// Time of the latest logged event.
    pub clock: f64,
    pending: Vec<Event>,
}

impl OperatorState {
    /// Opens the state in `dir`, seeding a fresh pool from `cfg` when the
    /// directory holds none yet.
    pub fn open(dir: &Path, cfg: &ScenarioConfig) -> Result<Self> {
        let pool_path = dir.join("pool.json");
        let pool = if pool_path.exists() {
            let text = fs::read_to_string(&pool_path).map_err(|e| GuardError::io(&pool_path, e))?;
            serde_json::from_str(&text).map_err(|e| GuardError::Trace {
                path: pool_path.clone(),
                reason: e.to_string(),
            })?
        } else {
            NodePool::new(cfg.job_nodes(), cfg.spare_nodes())
        };
        let triage_path = dir.join("triage.json");
        let triage = if triage_path.exists() {
            let text = fs::read_to_string(&triage_path).map_err(|e| GuardError::io(&triage_path, e))?;
            let states: Vec<TriageState> = serde_json::from_str(&text).map_err(|e| GuardError::Trace {
                path: triage_path.clone(),
                reason: e.to_string(),
            })?;
            states.into_iter().map(|s| (s.node.clone(), s)).collect()
        } else {
            BTreeMap::new()
        };
        let events_path = dir.join("events.jsonl");
        let clock = if events_path.exists() {
            read_events(&events_path)?.last().map_or(0.0, |e| e.t())
        } else {
            0.0
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            pool,
            triage,
            clock,
            pending: Vec::new(),
        })
    }

    /// Resolves the time of a new operation; the log never goes backwards.
    pub fn at(&self, t: Option<f64>) -> Result<f64> {
        let t = t.unwrap_or(self.clock);
        if t.is_nan() || t < self.clock {
            return Err(GuardError::Usage(format!(
                "time {t} is before the last logged event at {}",
                self.clock
            )));
        }
        Ok(t)
    }

    fn log(&mut self, e: Event) {
        self.clock = self.clock.max(e.t());
        self.pending.push(e);
    }

    fn flush_pool(&mut self) {
        for r in self.pool.take_log() {
            self.log(Event::Transition {
                node: r.node,
                from: r.from,
                to: r.to,
                action: r.action.to_string(),
                t: r.t,
            });
        }
    }

    /// Events logged since the state was opened.
    pub fn new_events(&self) -> &[Event] {
        &self.pending
    }

    /// Logs a sweep verdict and, when the node is waiting on one, applies it.
    pub fn record_sweep(&mut self, node: &NodeId, outcome: &SweepOutcome, t: f64) -> Result<()> {
        self.log(Event::Sweep {
            node: node.clone(),
            mode: outcome.mode,
            reference: outcome.pair.as_ref().map(|p| p.reference.clone()),
            single_passed: outcome.single_passed,
            pair_passed: outcome.pair_passed,
            passed: outcome.verdict.passed,
            components: outcome.verdict.failing_components.iter().copied().collect(),
            t,
        });
        let waiting = match self.pool.status(node) {
            Some(PoolStatus::Quarantined) => true,
            Some(PoolStatus::PendingVerification) => !self.pool.is_serving(node),
            _ => false,
        };
        if waiting {
            self.pool.on_sweep_result(node, outcome.verdict.passed, t)?;
            self.flush_pool();
        }
        Ok(())
    }

    /// One triage step with the observed error signal. A node entering
    /// triage gets a strike first; a third strike inside the window
    /// terminates it outright.
    pub fn triage(&mut self, node: &NodeId, errors: bool, t: f64, cfg: &TriageConfig) -> Result<TriageStage> {
        let known = self.pool.status(node).is_some() || self.pool.spares().any(|s| s == node);
        if !known {
            return Err(PolicyError::UnknownNode(node.clone()).into());
        }
        let mut state = self
            .triage
            .get(node)
            .cloned()
            .unwrap_or_else(|| TriageState::new(node.clone()));
        let entering = !self.triage.contains_key(node) || state.stage == TriageStage::ReturnForSweep;
        if state.stage == TriageStage::Terminate {
            return Err(TriageError::IllegalTransition {
                node: node.clone(),
                from: state.stage,
            }
            .into());
        }
        let from;
        if entering {
            state.reopen()?;
            from = state.stage;
            state = state.record_strike(t, cfg);
            self.log(Event::Strike {
                node: node.clone(),
                strikes_in_window: state.strikes_within(t, cfg),
                t,
            });
        } else {
            from = state.stage;
        }
        if state.stage != TriageStage::Terminate {
            state = state.step(ErrorSignals::new(errors), cfg)?;
        }
        let to = state.stage;
        self.log(Event::Triage {
            node: node.clone(),
            from,
            to,
            errors,
            t,
        });
        self.triage.insert(node.clone(), state);
        if to.is_outcome() {
            match (self.pool.status(node), to) {
                (Some(PoolStatus::Quarantined), _) => {
                    self.pool.on_triage_outcome(node, to == TriageStage::Terminate, t)?;
                }
                (Some(s), TriageStage::Terminate) if s != PoolStatus::Terminated => {
                    self.pool.manual_terminate(node, "triage", t)?;
                }
                _ => {}
            }
            self.flush_pool();
        }
        Ok(to)
    }

    /// Operator override: terminate regardless of triage stage.
    pub fn terminate(&mut self, node: &NodeId, reason: &str, t: f64) -> Result<()> {
        self.pool.manual_terminate(node, reason, t)?;
        self.log(Event::ManualTerminate {
            node: node.clone(),
            reason: reason.to_string(),
            t,
        });
        self.flush_pool();
        let state = self
            .triage
            .entry(node.clone())
            .or_insert_with(|| TriageState::new(node.clone()));
        state.stage = TriageStage::Terminate;
        Ok(())
    }

    /// Writes the pool and triage state and appends new events to the log.
    pub fn save(&mut self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| GuardError::io(&self.dir, e))?;
        let pool_path = self.dir.join("pool.json");
        let text = serde_json::to_string_pretty(&self.pool).expect("pool serializes");
        fs::write(&pool_path, text + "\n").map_err(|e| GuardError::io(&pool_path, e))?;
        let triage_path = self.dir.join("triage.json");
        let states: Vec<&TriageState> = self.triage.values().collect();
        let text = serde_json::to_string_pretty(&states).expect("triage serializes");
        fs::write(&triage_path, text + "\n").map_err(|e| GuardError::io(&triage_path, e))?;
        let events_path = self.dir.join("events.jsonl");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)
            .map_err(|e| GuardError::io(&events_path, e))?;
        for e in self.pending.drain(..) {
            let line = serde_json::to_string(&e).expect("events serialize");
            writeln!(f, "{line}").map_err(|e| GuardError::io(&events_path, e))?;
        }
        Ok(())
    }
}
