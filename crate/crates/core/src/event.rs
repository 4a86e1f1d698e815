//! Append-only event log records.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::detector::{KindSet, SeverityTier};
use crate::model::NodeId;
use crate::policy::PoolStatus;
use crate::sweep::{Component, SweepMode};
use crate::triage::TriageStage;

/// One log record. Serialized as a JSON object tagged by `"event"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Flag {
        node: NodeId,
        window: u64,
        severity: SeverityTier,
        kinds: KindSet,
        first_window: u64,
        t: f64,
    },
    /// Job-level slowdown when only job step time is attributable.
    JobFlag {
        job: String,
        window: u64,
        severity: SeverityTier,
        t: f64,
    },
    Transition {
        node: NodeId,
        from: PoolStatus,
        to: PoolStatus,
        action: String,
        t: f64,
    },
    Sweep {
        node: NodeId,
        mode: SweepMode,
        reference: Option<NodeId>,
        single_passed: bool,
        /// `None` when the mode runs no pair sweep.
        pair_passed: Option<bool>,
        passed: bool,
        components: Vec<Component>,
        t: f64,
    },
    SweepDeferred {
        node: NodeId,
        reason: String,
        t: f64,
    },
    TriageTicket {
        node: NodeId,
        t: f64,
    },
    Triage {
        node: NodeId,
        from: TriageStage,
        to: TriageStage,
        errors: bool,
        t: f64,
    },
    Strike {
        node: NodeId,
        strikes_in_window: usize,
        t: f64,
    },
    /// A node stopped the job outright.
    Crash {
        node: NodeId,
        t: f64,
    },
    /// The job restarted from its last checkpoint with a different node set.
    Restart {
        node: NodeId,
        replacement: Option<NodeId>,
        cause: String,
        lost_steps: u64,
        t: f64,
    },
    CheckpointSwap {
        node: NodeId,
        replacement: Option<NodeId>,
        step: u64,
        t: f64,
    },
    /// Hands-on repair of a crashed node by an operator.
    ManualRepair {
        node: NodeId,
        t: f64,
    },
    ManualTerminate {
        node: NodeId,
        reason: String,
        t: f64,
    },
    SpareExhausted {
        node: NodeId,
        t: f64,
    },
    /// A new node joined the spares in place of a terminated one.
    Provisioned {
        node: NodeId,
        replaces: NodeId,
        t: f64,
    },
}

impl Event {
    pub fn t(&self) -> f64 {
        match self {
            Event::Flag { t, .. }
            | Event::JobFlag { t, .. }
            | Event::Transition { t, .. }
            | Event::Sweep { t, .. }
            | Event::SweepDeferred { t, .. }
            | Event::TriageTicket { t, .. }
            | Event::Triage { t, .. }
            | Event::Strike { t, .. }
            | Event::Crash { t, .. }
            | Event::Restart { t, .. }
            | Event::CheckpointSwap { t, .. }
            | Event::ManualRepair { t, .. }
            | Event::ManualTerminate { t, .. }
            | Event::SpareExhausted { t, .. }
            | Event::Provisioned { t, .. } => *t,
        }
    }

    /// The node the event is about, if any.
    pub fn node(&self) -> Option<&NodeId> {
        match self {
            Event::JobFlag { .. } => None,
            Event::Flag { node, .. }
            | Event::Transition { node, .. }
            | Event::Sweep { node, .. }
            | Event::SweepDeferred { node, .. }
            | Event::TriageTicket { node, .. }
            | Event::Triage { node, .. }
            | Event::Strike { node, .. }
            | Event::Crash { node, .. }
            | Event::Restart { node, .. }
            | Event::CheckpointSwap { node, .. }
            | Event::ManualRepair { node, .. }
            | Event::ManualTerminate { node, .. }
            | Event::SpareExhausted { node, .. }
            | Event::Provisioned { node, .. } => Some(node),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Event::Flag { .. } => "flag",
            Event::JobFlag { .. } => "job_flag",
            Event::Transition { .. } => "transition",
            Event::Sweep { .. } => "sweep",
            Event::SweepDeferred { .. } => "sweep_deferred",
            Event::TriageTicket { .. } => "triage_ticket",
            Event::Triage { .. } => "triage",
            Event::Strike { .. } => "strike",
            Event::Crash { .. } => "crash",
            Event::Restart { .. } => "restart",
            Event::CheckpointSwap { .. } => "checkpoint_swap",
            Event::ManualRepair { .. } => "manual_repair",
            Event::ManualTerminate { .. } => "manual_terminate",
            Event::SpareExhausted { .. } => "spare_exhausted",
            Event::Provisioned { .. } => "provisioned",
        }
    }
}
