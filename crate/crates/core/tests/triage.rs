use guard_core::model::NodeId;
use guard_core::triage::{next_stage, NoErrorPolicy, TriageConfig, TriageStage, TriageState, DAY_S};
use proptest::prelude::*;

const POLICIES: [NoErrorPolicy; 2] = [NoErrorPolicy::Terminate, NoErrorPolicy::Sweep];

#[test]
fn outcomes_are_absorbing() {
    for policy in POLICIES {
        for errors in [false, true] {
            assert_eq!(next_stage(TriageStage::Terminate, errors, policy), None);
            assert_eq!(next_stage(TriageStage::ReturnForSweep, errors, policy), None);
        }
    }
}

#[test]
fn every_path_ends_within_three_steps() {
    // Enumerate every error sequence of length three from quarantine.
    for policy in POLICIES {
        for bits in 0..8u8 {
            let mut stage = TriageStage::Quarantined;
            let mut steps = 0;
            while !stage.is_outcome() {
                let errors = bits >> steps & 1 == 1;
                stage = next_stage(stage, errors, policy).expect("non-outcome stages have edges");
                steps += 1;
            }
            assert!(steps <= 3, "{policy:?} {bits:03b}");
        }
    }
}

#[test]
fn terminated_node_cannot_reopen() {
    let mut s = TriageState::new(NodeId::new("a").unwrap());
    s.stage = TriageStage::Terminate;
    assert!(s.reopen().is_err());
}

/// Terminated iff some strike has `limit - 1` earlier strikes within the
/// trailing window ending at it.
fn oracle(times: &[f64], cfg: &TriageConfig) -> bool {
    times.iter().any(|&now| {
        times
            .iter()
            .filter(|&&s| s > now - cfg.strike_window_s && s <= now)
            .count()
            >= cfg.strike_limit
    })
}

proptest! {
    #[test]
    fn strikes_match_sliding_window_scan(gaps in proptest::collection::vec(0.0..5.0 * DAY_S, 0..10)) {
        let cfg = TriageConfig::default();
        let mut times = Vec::new();
        let mut t = 0.0;
        for g in gaps {
            t += g;
            times.push(t);
        }
        let mut s = TriageState::new(NodeId::new("a").unwrap());
        for &at in &times {
            s = s.record_strike(at, &cfg);
        }
        prop_assert_eq!(s.stage == TriageStage::Terminate, oracle(&times, &cfg));
        prop_assert_eq!(s.strikes, times);
    }
}
