//! The good-node pool and the tiered response to detector verdicts.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::SeverityTier;
use crate::model::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolStatus {
    Healthy,
    PendingVerification,
    Quarantined,
    Terminated,
}

impl PoolStatus {
    pub const ALL: [PoolStatus; 4] = [
        PoolStatus::Healthy,
        PoolStatus::PendingVerification,
        PoolStatus::Quarantined,
        PoolStatus::Terminated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolStatus::Healthy => "healthy",
            PoolStatus::PendingVerification => "pending_verification",
            PoolStatus::Quarantined => "quarantined",
            PoolStatus::Terminated => "terminated",
        }
    }

    /// Whether a node in this status may take part in a job.
    pub fn may_serve(self) -> bool {
        matches!(self, PoolStatus::Healthy | PoolStatus::PendingVerification)
    }
}

impl fmt::Display for PoolStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inputs to the pool state machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolEvent {
    Flag(SeverityTier),
    NoFlag,
    /// The node stopped the job outright.
    Crash,
    /// A node awaiting the next checkpoint is swapped out of its job.
    CheckpointSwap,
    SweepPassed,
    SweepFailed,
    TriageReturnForSweep,
    TriageTerminate,
    ManualTerminate,
}

impl PoolEvent {
    pub const ALL: [PoolEvent; 11] = [
        PoolEvent::Flag(SeverityTier::NoImpact),
        PoolEvent::Flag(SeverityTier::Moderate),
        PoolEvent::Flag(SeverityTier::Severe),
        PoolEvent::NoFlag,
        PoolEvent::Crash,
        PoolEvent::CheckpointSwap,
        PoolEvent::SweepPassed,
        PoolEvent::SweepFailed,
        PoolEvent::TriageReturnForSweep,
        PoolEvent::TriageTerminate,
        PoolEvent::ManualTerminate,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("illegal transition for {node}: {event:?} while {from}")]
    IllegalTransition {
        node: NodeId,
        from: PoolStatus,
        event: PoolEvent,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is already in the pool")]
    DuplicateNode(NodeId),
}

/// The full transition table. Every (status, event) pair is listed; `None`
/// marks an illegal transition.
pub fn transition(from: PoolStatus, event: PoolEvent) -> Option<PoolStatus> {
    use PoolEvent as E;
    use PoolStatus as S;
    use SeverityTier as T;
    match (from, event) {
        (s, E::NoFlag) => Some(s),

        (S::Healthy, E::Flag(T::NoImpact | T::Moderate)) => Some(S::PendingVerification),
        (S::Healthy, E::Flag(T::Severe)) => Some(S::Quarantined),
        (S::Healthy, E::Crash) => Some(S::Quarantined),
        (S::Healthy, E::CheckpointSwap) => None,
        (S::Healthy, E::SweepPassed | E::SweepFailed) => None,
        (S::Healthy, E::TriageReturnForSweep | E::TriageTerminate) => None,
        (S::Healthy, E::ManualTerminate) => Some(S::Terminated),

        (S::PendingVerification, E::Flag(T::NoImpact | T::Moderate)) => Some(S::PendingVerification),
        (S::PendingVerification, E::Flag(T::Severe)) => Some(S::Quarantined),
        (S::PendingVerification, E::Crash) => Some(S::Quarantined),
        (S::PendingVerification, E::CheckpointSwap) => Some(S::PendingVerification),
        (S::PendingVerification, E::SweepPassed) => Some(S::Healthy),
        (S::PendingVerification, E::SweepFailed) => Some(S::Quarantined),
        (S::PendingVerification, E::TriageReturnForSweep | E::TriageTerminate) => None,
        (S::PendingVerification, E::ManualTerminate) => Some(S::Terminated),

        (S::Quarantined, E::Flag(_)) => None,
        (S::Quarantined, E::Crash | E::CheckpointSwap) => None,
        (S::Quarantined, E::SweepPassed) => Some(S::Healthy),
        (S::Quarantined, E::SweepFailed) => Some(S::Quarantined),
        (S::Quarantined, E::TriageReturnForSweep) => Some(S::Quarantined),
        (S::Quarantined, E::TriageTerminate | E::ManualTerminate) => Some(S::Terminated),

        (S::Terminated, _) => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodePoolState {
    pub node: NodeId,
    pub status: PoolStatus,
    pub since: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    None,
    MonitorClosely,
    DeferToCheckpoint { node: NodeId },
    ImmediateRestartWithReplacement { node: NodeId, replacement: NodeId },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::None => "none",
            Action::MonitorClosely => "monitor_closely",
            Action::DeferToCheckpoint { .. } => "defer_to_checkpoint",
            Action::ImmediateRestartWithReplacement { .. } => "immediate_restart_with_replacement",
        }
    }
}

/// Why a sweep was requested. Sweeps are only ever event-driven.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepCause {
    Flag,
    CheckpointSwap,
    Repair,
    Triage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub node: NodeId,
    pub cause: SweepCause,
    pub requested_at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum PoolWarning {
    SpareExhausted { node: NodeId, t: f64 },
}

/// A recorded status change, for the event log.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub node: NodeId,
    pub from: PoolStatus,
    pub to: PoolStatus,
    pub action: &'static str,
    pub t: f64,
}

/// The pool of nodes known to the scheduler.
///
/// `states` holds every node that has entered service; `spares` are
/// interchangeable, never-used nodes held in reserve. A replacement for a
/// job is drawn first from idle healthy nodes, then from spares.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NodePool {
    states: BTreeMap<NodeId, NodePoolState>,
    spares: VecDeque<NodeId>,
    idle: VecDeque<NodeId>,
    serving: BTreeSet<NodeId>,
    deferred: BTreeSet<NodeId>,
    sweep_queue: VecDeque<SweepRequest>,
    tickets: VecDeque<NodeId>,
    warnings: Vec<PoolWarning>,
    #[serde(skip)]
    log: Vec<TransitionRecord>,
}

impl NodePool {
    /// Builds a pool in which `serving` nodes are Healthy and in a job.
    pub fn new<I, J>(serving: I, spares: J) -> Self
    where
        I: IntoIterator<Item = NodeId>,
        J: IntoIterator<Item = NodeId>,
    {
        let mut pool = NodePool::default();
        for node in serving {
            pool.states.insert(
                node.clone(),
                NodePoolState {
                    node: node.clone(),
                    status: PoolStatus::Healthy,
                    since: 0.0,
                    reason: "initial".to_string(),
                },
            );
            pool.serving.insert(node);
        }
        pool.spares = spares.into_iter().collect();
        pool
    }

    pub fn status(&self, node: &NodeId) -> Option<PoolStatus> {
        self.states.get(node).map(|s| s.status)
    }

    pub fn state(&self, node: &NodeId) -> Option<&NodePoolState> {
        self.states.get(node)
    }

    pub fn states(&self) -> impl Iterator<Item = &NodePoolState> {
        self.states.values()
    }

    pub fn spares(&self) -> impl Iterator<Item = &NodeId> {
        self.spares.iter()
    }

    pub fn idle(&self) -> impl Iterator<Item = &NodeId> {
        self.idle.iter()
    }

    pub fn serving(&self) -> &BTreeSet<NodeId> {
        &self.serving
    }

    pub fn is_serving(&self, node: &NodeId) -> bool {
        self.serving.contains(node)
    }

    pub fn deferred(&self) -> &BTreeSet<NodeId> {
        &self.deferred
    }

    pub fn warnings(&self) -> &[PoolWarning] {
        &self.warnings
    }

    /// Total nodes accounted for: known states plus unused spares.
    pub fn total(&self) -> usize {
        self.states.len() + self.spares.len()
    }

    pub fn count(&self, status: PoolStatus) -> usize {
        self.states.values().filter(|s| s.status == status).count()
    }

    pub fn pending_sweeps(&self) -> impl Iterator<Item = &SweepRequest> {
        self.sweep_queue.iter()
    }

    pub fn next_sweep(&mut self) -> Option<SweepRequest> {
        self.sweep_queue.pop_front()
    }

    /// Puts a request back at the front, e.g. when no reference was available.
    pub fn requeue_sweep(&mut self, req: SweepRequest) {
        self.sweep_queue.push_front(req);
    }

    pub fn next_ticket(&mut self) -> Option<NodeId> {
        self.tickets.pop_front()
    }

    pub fn open_tickets(&self) -> impl Iterator<Item = &NodeId> {
        self.tickets.iter()
    }

    /// Drains transition records accumulated since the last call.
    pub fn take_log(&mut self) -> Vec<TransitionRecord> {
        core::mem::take(&mut self.log)
    }

    fn apply(
        &mut self,
        node: &NodeId,
        event: PoolEvent,
        action: &'static str,
        reason: &str,
        now: f64,
    ) -> Result<PoolStatus, PolicyError> {
        let state = self
            .states
            .get_mut(node)
            .ok_or_else(|| PolicyError::UnknownNode(node.clone()))?;
        let from = state.status;
        let to = transition(from, event).ok_or_else(|| PolicyError::IllegalTransition {
            node: node.clone(),
            from,
            event,
        })?;
        if to != from {
            state.status = to;
            state.since = now;
            state.reason = reason.to_string();
            self.log.push(TransitionRecord {
                node: node.clone(),
                from,
                to,
                action,
                t: now,
            });
        }
        if to != PoolStatus::Healthy {
            self.idle.retain(|n| n != node);
        }
        if !to.may_serve() {
            self.serving.remove(node);
            self.deferred.remove(node);
        }
        Ok(to)
    }

    /// Takes an idle healthy node, or else a spare, into service.
    fn draw_replacement(&mut self, now: f64) -> Option<NodeId> {
        let node = match self.idle.pop_front() {
            Some(n) => n,
            None => {
                let n = self.spares.pop_front()?;
                self.states.insert(
                    n.clone(),
                    NodePoolState {
                        node: n.clone(),
                        status: PoolStatus::Healthy,
                        since: now,
                        reason: "spare".to_string(),
                    },
                );
                n
            }
        };
        self.serving.insert(node.clone());
        Some(node)
    }

    /// Moves a spare into the pool as an idle healthy node.
    fn replenish_from_spares(&mut self, now: f64) -> Option<NodeId> {
        let n = self.spares.pop_front()?;
        self.states.insert(
            n.clone(),
            NodePoolState {
                node: n.clone(),
                status: PoolStatus::Healthy,
                since: now,
                reason: "replacement".to_string(),
            },
        );
        self.idle.push_back(n.clone());
        Some(n)
    }

    fn enqueue_sweep(&mut self, node: &NodeId, cause: SweepCause, now: f64) {
        if self.sweep_queue.iter().any(|r| &r.node == node) {
            return;
        }
        self.sweep_queue.push_back(SweepRequest {
            node: node.clone(),
            cause,
            requested_at: now,
        });
    }

    fn exhausted(&mut self, node: &NodeId, now: f64) {
        self.warnings.push(PoolWarning::SpareExhausted {
            node: node.clone(),
            t: now,
        });
    }

    /// Responds to a detector verdict for `node` (`None` means no flag).
    pub fn apply_verdict(
        &mut self,
        node: &NodeId,
        severity: Option<SeverityTier>,
        now: f64,
    ) -> Result<Action, PolicyError> {
        let Some(severity) = severity else {
            self.apply(node, PoolEvent::NoFlag, "none", "", now)?;
            return Ok(Action::None);
        };
        match severity {
            SeverityTier::NoImpact | SeverityTier::Moderate if !self.serving.contains(node) => {
                // Out of service: nothing to wait for, verify it directly.
                self.apply(node, PoolEvent::Flag(severity), "sweep", "flag", now)?;
                self.enqueue_sweep(node, SweepCause::Flag, now);
                Ok(Action::None)
            }
            SeverityTier::NoImpact => {
                self.apply(node, PoolEvent::Flag(severity), "monitor_closely", "flag", now)?;
                Ok(Action::MonitorClosely)
            }
            SeverityTier::Moderate => {
                self.apply(node, PoolEvent::Flag(severity), "defer_to_checkpoint", "flag", now)?;
                self.deferred.insert(node.clone());
                Ok(Action::DeferToCheckpoint { node: node.clone() })
            }
            SeverityTier::Severe => {
                let status = self
                    .status(node)
                    .ok_or_else(|| PolicyError::UnknownNode(node.clone()))?;
                if transition(status, PoolEvent::Flag(severity)).is_none() {
                    return Err(PolicyError::IllegalTransition {
                        node: node.clone(),
                        from: status,
                        event: PoolEvent::Flag(severity),
                    });
                }
                let serving = self.serving.contains(node);
                if serving && self.idle.is_empty() && self.spares.is_empty() {
                    // No replacement: keep the node until the next checkpoint.
                    self.apply(
                        node,
                        PoolEvent::Flag(SeverityTier::Moderate),
                        "defer_to_checkpoint",
                        "severe flag, no spare",
                        now,
                    )?;
                    self.exhausted(node, now);
                    self.deferred.insert(node.clone());
                    return Ok(Action::DeferToCheckpoint { node: node.clone() });
                }
                self.apply(
                    node,
                    PoolEvent::Flag(severity),
                    "immediate_restart_with_replacement",
                    "severe flag",
                    now,
                )?;
                self.enqueue_sweep(node, SweepCause::Flag, now);
                if !serving {
                    return Ok(Action::None);
                }
                let replacement = self.draw_replacement(now).expect("checked above");
                Ok(Action::ImmediateRestartWithReplacement {
                    node: node.clone(),
                    replacement,
                })
            }
        }
    }

    /// A serving node crashed. It is quarantined, and a replacement (if
    /// any) joins the job.
    pub fn on_crash(&mut self, node: &NodeId, now: f64) -> Result<Option<NodeId>, PolicyError> {
        self.apply(node, PoolEvent::Crash, "restart_after_crash", "crash", now)?;
        let replacement = self.draw_replacement(now);
        if replacement.is_none() {
            self.exhausted(node, now);
        }
        Ok(replacement)
    }

    /// Marks a crashed node repaired; it now awaits a sweep.
    pub fn on_repaired(&mut self, node: &NodeId, now: f64) -> Result<(), PolicyError> {
        match self.status(node) {
            Some(PoolStatus::Quarantined) => {
                self.enqueue_sweep(node, SweepCause::Repair, now);
                Ok(())
            }
            Some(from) => Err(PolicyError::IllegalTransition {
                node: node.clone(),
                from,
                event: PoolEvent::SweepFailed,
            }),
            None => Err(PolicyError::UnknownNode(node.clone())),
        }
    }

    /// Swaps a deferred node out of its job at a checkpoint. Returns the
    /// replacement, if one was available.
    pub fn checkpoint_swap(&mut self, node: &NodeId, now: f64) -> Result<Option<NodeId>, PolicyError> {
        self.apply(node, PoolEvent::CheckpointSwap, "checkpoint_swap", "checkpoint", now)?;
        self.deferred.remove(node);
        let was_serving = self.serving.remove(node);
        self.enqueue_sweep(node, SweepCause::CheckpointSwap, now);
        if !was_serving {
            return Ok(None);
        }
        let replacement = self.draw_replacement(now);
        if replacement.is_none() {
            self.exhausted(node, now);
        }
        Ok(replacement)
    }

    /// Records a sweep verdict for an out-of-service node.
    pub fn on_sweep_result(&mut self, node: &NodeId, passed: bool, now: f64) -> Result<(), PolicyError> {
        let status = self
            .status(node)
            .ok_or_else(|| PolicyError::UnknownNode(node.clone()))?;
        let event = if passed {
            PoolEvent::SweepPassed
        } else {
            PoolEvent::SweepFailed
        };
        if status == PoolStatus::PendingVerification && self.serving.contains(node) {
            return Err(PolicyError::IllegalTransition {
                node: node.clone(),
                from: status,
                event,
            });
        }
        let action = if passed { "return_to_pool" } else { "keep_quarantined" };
        let to = self.apply(node, event, action, "sweep", now)?;
        if to == PoolStatus::Healthy {
            self.idle.push_back(node.clone());
        } else {
            self.tickets.push_back(node.clone());
        }
        Ok(())
    }

    /// Applies a triage outcome. On termination, a spare (if any) joins the
    /// pool as an idle healthy node and is returned.
    pub fn on_triage_outcome(
        &mut self,
        node: &NodeId,
        terminate: bool,
        now: f64,
    ) -> Result<Option<NodeId>, PolicyError> {
        if terminate {
            self.apply(node, PoolEvent::TriageTerminate, "terminate_replace", "triage", now)?;
            let r = self.replenish_from_spares(now);
            if r.is_none() {
                self.exhausted(node, now);
            }
            Ok(r)
        } else {
            self.apply(node, PoolEvent::TriageReturnForSweep, "return_for_sweep", "triage", now)?;
            self.enqueue_sweep(node, SweepCause::Triage, now);
            Ok(None)
        }
    }

    /// Operator override: terminate a node regardless of its stage.
    pub fn manual_terminate(&mut self, node: &NodeId, reason: &str, now: f64) -> Result<Option<NodeId>, PolicyError> {
        self.apply(node, PoolEvent::ManualTerminate, "manual_terminate", reason, now)?;
        self.sweep_queue.retain(|r| &r.node != node);
        self.tickets.retain(|n| n != node);
        let r = self.replenish_from_spares(now);
        if r.is_none() {
            self.exhausted(node, now);
        }
        Ok(r)
    }

    /// Adds a newly provisioned node to the back of the spares.
    pub fn add_spare(&mut self, node: NodeId) -> Result<(), PolicyError> {
        if self.states.contains_key(&node) || self.spares.contains(&node) {
            return Err(PolicyError::DuplicateNode(node));
        }
        self.spares.push_back(node);
        Ok(())
    }

    /// Draws a node to grow a job that shrank for lack of replacements.
    pub fn draw_for_job(&mut self, now: f64) -> Option<NodeId> {
        if self.idle.is_empty() && self.spares.is_empty() {
            return None;
        }
        self.draw_replacement(now)
    }

    /// Removes a node from the idle queue to act as a sweep reference, and
    /// back again.
    pub fn idle_contains(&self, node: &NodeId) -> bool {
        self.idle.contains(node)
    }

    /// Checks internal consistency; used by tests and debug assertions.
    pub fn check(&self) -> Result<(), String> {
        for n in &self.serving {
            match self.status(n) {
                Some(s) if s.may_serve() => {}
                other => return Err(alloc::format!("{n} serving while {other:?}")),
            }
        }
        for n in &self.idle {
            if self.status(n) != Some(PoolStatus::Healthy) || self.serving.contains(n) {
                return Err(alloc::format!("{n} idle but not healthy and free"));
            }
        }
        for n in &self.spares {
            if self.states.contains_key(n) {
                return Err(alloc::format!("{n} is both spare and known"));
            }
        }
        Ok(())
    }
}
