//! Remediation workflow for nodes that failed a sweep, with the
//! three-strikes termination rule.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeId, ValidationError};

pub const DAY_S: f64 = 86_400.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageStage {
    Quarantined,
    RebootRedeployDrivers,
    Reprovision,
    ReturnForSweep,
    Terminate,
}

impl TriageStage {
    pub const ALL: [TriageStage; 5] = [
        TriageStage::Quarantined,
        TriageStage::RebootRedeployDrivers,
        TriageStage::Reprovision,
        TriageStage::ReturnForSweep,
        TriageStage::Terminate,
    ];

    /// Whether the workflow has reached an outcome.
    pub fn is_outcome(self) -> bool {
        matches!(self, TriageStage::ReturnForSweep | TriageStage::Terminate)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TriageStage::Quarantined => "quarantined",
            TriageStage::RebootRedeployDrivers => "reboot_redeploy_drivers",
            TriageStage::Reprovision => "reprovision",
            TriageStage::ReturnForSweep => "return_for_sweep",
            TriageStage::Terminate => "terminate",
        }
    }
}

impl fmt::Display for TriageStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What to do with a quarantined node that shows no actionable errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoErrorPolicy {
    #[default]
    Terminate,
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageConfig {
    pub no_error_policy: NoErrorPolicy,
    pub strike_window_s: f64,
    pub strike_limit: usize,
    pub reboot_s: f64,
    pub reprovision_s: f64,
    /// How long a node is watched for errors after each remediation step.
    pub observation_s: f64,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            no_error_policy: NoErrorPolicy::Terminate,
            strike_window_s: 7.0 * DAY_S,
            strike_limit: 3,
            reboot_s: 600.0,
            reprovision_s: 3600.0,
            observation_s: 60.0,
        }
    }
}

impl TriageConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.strike_window_s > 0.0) {
            return Err(ValidationError::new("strike_window_s", "must be positive"));
        }
        if self.strike_limit < 1 {
            return Err(ValidationError::new("strike_limit", "must be at least 1"));
        }
        if self.reboot_s < 0.0 || self.reprovision_s < 0.0 || self.observation_s < 0.0 {
            return Err(ValidationError::new("reboot_s", "durations must be non-negative"));
        }
        Ok(())
    }
}

/// Whether the node emitted GPU or network errors while observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSignals {
    pub emitting_gpu_or_network_errors: bool,
}

impl ErrorSignals {
    pub fn new(errors: bool) -> Self {
        Self {
            emitting_gpu_or_network_errors: errors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TriageError {
    #[error("illegal triage transition for {node}: {from}")]
    IllegalTransition { node: NodeId, from: TriageStage },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriageState {
    pub node: NodeId,
    pub stage: TriageStage,
    /// Strike timestamps, ascending.
    pub strikes: Vec<f64>,
}

/// One edge of the remediation graph.
pub fn next_stage(stage: TriageStage, errors: bool, policy: NoErrorPolicy) -> Option<TriageStage> {
    use TriageStage as S;
    match (stage, errors) {
        (S::Quarantined, true) => Some(S::RebootRedeployDrivers),
        (S::Quarantined, false) => Some(match policy {
            NoErrorPolicy::Terminate => S::Terminate,
            NoErrorPolicy::Sweep => S::ReturnForSweep,
        }),
        (S::RebootRedeployDrivers, true) => Some(S::Reprovision),
        (S::RebootRedeployDrivers, false) => Some(S::ReturnForSweep),
        (S::Reprovision, true) => Some(S::Terminate),
        (S::Reprovision, false) => Some(S::ReturnForSweep),
        (S::ReturnForSweep, _) => None,
        (S::Terminate, _) => None,
    }
}

impl TriageState {
    pub fn new(node: NodeId) -> Self {
        Self {
            node,
            stage: TriageStage::Quarantined,
            strikes: Vec::new(),
        }
    }

    /// Starts a new pass through the workflow, keeping strike history.
    pub fn reopen(&mut self) -> Result<(), TriageError> {
        if self.stage == TriageStage::Terminate {
            return Err(TriageError::IllegalTransition {
                node: self.node.clone(),
                from: self.stage,
            });
        }
        self.stage = TriageStage::Quarantined;
        Ok(())
    }

    pub fn step(&self, signals: ErrorSignals, cfg: &TriageConfig) -> Result<Self, TriageError> {
        let stage =
            next_stage(self.stage, signals.emitting_gpu_or_network_errors, cfg.no_error_policy).ok_or_else(|| {
                TriageError::IllegalTransition {
                    node: self.node.clone(),
                    from: self.stage,
                }
            })?;
        Ok(Self { stage, ..self.clone() })
    }

    /// Strikes falling in the trailing window that ends at `now`.
    pub fn strikes_within(&self, now: f64, cfg: &TriageConfig) -> usize {
        self.strikes
            .iter()
            .filter(|&&s| s > now - cfg.strike_window_s && s <= now)
            .count()
    }

    /// Records a strike; forces termination once the trailing window holds
    /// `strike_limit` strikes.
    pub fn record_strike(&self, now: f64, cfg: &TriageConfig) -> Self {
        let mut next = self.clone();
        let at = next.strikes.partition_point(|&s| s <= now);
        next.strikes.insert(at, now);
        if next.strikes_within(now, cfg) >= cfg.strike_limit {
            next.stage = TriageStage::Terminate;
        }
        next
    }
}

/// Simulated time a stage takes before its outcome can be observed.
pub fn stage_duration(stage: TriageStage, cfg: &TriageConfig) -> f64 {
    match stage {
        TriageStage::RebootRedeployDrivers => cfg.reboot_s + cfg.observation_s,
        TriageStage::Reprovision => cfg.reprovision_s + cfg.observation_s,
        TriageStage::Quarantined => cfg.observation_s,
        TriageStage::ReturnForSweep | TriageStage::Terminate => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(stage: TriageStage) -> TriageState {
        TriageState {
            node: NodeId::new("a").unwrap(),
            stage,
            strikes: Vec::new(),
        }
    }

    fn step(stage: TriageStage, errors: bool) -> Result<TriageStage, TriageError> {
        st(stage)
            .step(ErrorSignals::new(errors), &TriageConfig::default())
            .map(|s| s.stage)
    }

    #[test]
    fn edges() {
        use TriageStage::*;
        assert_eq!(step(Quarantined, true), Ok(RebootRedeployDrivers));
        assert_eq!(step(Quarantined, false), Ok(Terminate));
        assert_eq!(step(RebootRedeployDrivers, true), Ok(Reprovision));
        assert_eq!(step(RebootRedeployDrivers, false), Ok(ReturnForSweep));
        assert_eq!(step(Reprovision, true), Ok(Terminate));
        assert_eq!(step(Reprovision, false), Ok(ReturnForSweep));
        assert!(step(Terminate, true).is_err());
        assert!(step(Terminate, false).is_err());
    }

    #[test]
    fn sweep_policy_for_silent_nodes() {
        let cfg = TriageConfig {
            no_error_policy: NoErrorPolicy::Sweep,
            ..TriageConfig::default()
        };
        let s = st(TriageStage::Quarantined)
            .step(ErrorSignals::new(false), &cfg)
            .unwrap();
        assert_eq!(s.stage, TriageStage::ReturnForSweep);
    }

    fn strikes(days: &[f64]) -> TriageState {
        let cfg = TriageConfig::default();
        days.iter()
            .fold(st(TriageStage::Quarantined), |s, d| s.record_strike(d * DAY_S, &cfg))
    }

    #[test]
    fn three_strikes_in_a_week_terminate() {
        assert_eq!(strikes(&[1.0, 3.0, 6.0]).stage, TriageStage::Terminate);
    }

    #[test]
    fn expired_strikes_do_not_terminate() {
        let s = strikes(&[1.0, 9.0]);
        assert_eq!(s.stage, TriageStage::Quarantined);
        assert_eq!(s.strikes.len(), 2);
        assert_eq!(s.strikes_within(9.0 * DAY_S, &TriageConfig::default()), 1);
        let again = strikes(&[1.0, 9.0, 9.0]);
        assert_eq!(again.strikes_within(9.0 * DAY_S, &TriageConfig::default()), 2);
        assert_eq!(again.stage, TriageStage::Quarantined);
        assert_eq!(strikes(&[1.0, 8.0, 9.0]).stage, TriageStage::Quarantined);
    }

    #[test]
    fn first_strike_keeps_stage() {
        let s = strikes(&[2.0]);
        assert_eq!(s.strikes, vec![2.0 * DAY_S]);
        assert_eq!(s.stage, TriageStage::Quarantined);
    }

    #[test]
    fn terminate_cannot_reopen() {
        let mut s = st(TriageStage::Terminate);
        assert!(s.reopen().is_err());
    }
}
