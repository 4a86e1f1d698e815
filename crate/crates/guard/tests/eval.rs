use std::collections::BTreeMap;

use guard::trace::{read_trace, write_trace};
use guard_core::eval::{eval_detection, eval_reliability, score_intervals, HumanCosts, NodeInterval};
use guard_core::model::NodeId;
use guard_core::sim::{run_scenario, ScenarioConfig};
use proptest::prelude::*;
use tempfile::TempDir;

fn n(i: usize) -> NodeId {
    NodeId::new(format!("x{i:03}")).unwrap()
}

fn iv(i: usize, start_s: f64, end_s: f64, faulty: bool, closed: bool) -> NodeInterval {
    NodeInterval {
        node: n(i),
        start_s,
        end_s,
        faulty,
        class: None,
        closed,
    }
}

#[test]
fn two_hundred_intervals_counted_by_hand() {
    // Every interval is [0, 100) on its own node; grace is 30 s.
    //   i % 4 == 0: faulty, flag at 130 (last instant of grace)  -> 50 TP
    //   i % 8 == 2: faulty, flag at 130.5 (past grace)           -> 25 FN
    //   i % 8 == 6: faulty, never flagged                        -> 25 FN
    //   i % 4 == 1: healthy, flag at 100 (open end)              -> 50 TN
    //   i % 4 == 3: healthy, flag at 0                           -> 50 FP
    let mut intervals = Vec::new();
    let mut flags: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for i in 0..200 {
        intervals.push(iv(i, 0.0, 100.0, i % 2 == 0, false));
        let t = match (i % 4, i % 8) {
            (0, _) => Some(130.0),
            (_, 2) => Some(130.5),
            (1, _) => Some(100.0),
            (3, _) => Some(0.0),
            _ => None,
        };
        if let Some(t) = t {
            flags.entry(n(i)).or_default().push(t);
        }
    }
    let r = score_intervals(&intervals, &flags, 30.0, 30.0);
    assert_eq!(
        (r.true_positives, r.false_negatives, r.false_positives, r.true_negatives),
        (50, 50, 50, 50)
    );
    assert_eq!((r.fpr, r.fnr), (Some(0.5), Some(0.5)));
    // Every hit is 130 s after onset.
    assert_eq!(r.detection_latency_windows.count, 50);
    assert!((r.detection_latency_windows.mean - 130.0 / 30.0).abs() < 1e-12);
}

#[test]
fn closed_healthy_interval_counts_its_end() {
    let flags = BTreeMap::from([(n(0), vec![100.0]), (n(1), vec![100.0])]);
    let r = score_intervals(
        &[iv(0, 0.0, 100.0, false, true), iv(1, 0.0, 100.0, false, false)],
        &flags,
        30.0,
        30.0,
    );
    assert_eq!((r.false_positives, r.true_negatives), (1, 1));
}

#[test]
fn no_positives_or_negatives_gives_no_rate() {
    let r = score_intervals(&[], &BTreeMap::new(), 30.0, 30.0);
    assert_eq!((r.fpr, r.fnr), (None, None));
}

fn case() -> impl Strategy<Value = (Vec<NodeInterval>, BTreeMap<NodeId, Vec<f64>>)> {
    let ivs = proptest::collection::vec(
        (0usize..6, 0.0..500.0f64, 1.0..300.0f64, any::<bool>(), any::<bool>()),
        0..40,
    );
    let fl = proptest::collection::vec((0usize..6, 0.0..900.0f64), 0..40);
    (ivs, fl).prop_map(|(ivs, fl)| {
        let intervals = ivs.into_iter().map(|(i, s, d, f, c)| iv(i, s, s + d, f, c)).collect();
        let mut flags: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        for (i, t) in fl {
            flags.entry(n(i)).or_default().push(t);
        }
        (intervals, flags)
    })
}

proptest! {
    #[test]
    fn confusion_counts_are_consistent((intervals, flags) in case()) {
        let r = score_intervals(&intervals, &flags, 90.0, 30.0);
        let faulty = intervals.iter().filter(|i| i.faulty).count();
        prop_assert_eq!(r.positives, faulty);
        prop_assert_eq!(r.negatives, intervals.len() - faulty);
        prop_assert_eq!(r.true_positives + r.false_negatives, r.positives);
        prop_assert_eq!(r.false_positives + r.true_negatives, r.negatives);
        if r.negatives > 0 {
            prop_assert_eq!(r.fpr, Some(r.false_positives as f64 / r.negatives as f64));
        }
        if r.positives > 0 {
            prop_assert_eq!(r.fnr, Some(r.false_negatives as f64 / r.positives as f64));
        }
        prop_assert_eq!(r.detection_latency_windows.count, r.true_positives);
    }

    #[test]
    fn more_flags_never_lose_a_detection((intervals, flags) in case(), extra in 0.0..900.0f64) {
        let before = score_intervals(&intervals, &flags, 90.0, 30.0);
        let mut more = flags.clone();
        for f in more.values_mut() {
            f.push(extra);
        }
        let after = score_intervals(&intervals, &more, 90.0, 30.0);
        prop_assert!(after.true_positives >= before.true_positives);
        prop_assert!(after.false_positives >= before.false_positives);
    }
}

#[test]
fn scores_survive_a_trace_round_trip() {
    let mut cfg = ScenarioConfig {
        seed: 3,
        node_count: 8,
        spare_count: 2,
        horizon_steps: 1500,
        ..ScenarioConfig::default()
    };
    cfg.background.rate_per_node_h = 0.5;
    let trace = run_scenario(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    write_trace(dir.path(), &trace, &cfg).unwrap();
    let back = read_trace(dir.path(), true).unwrap();
    assert_eq!(back, trace);
    assert_eq!(eval_detection(&back), eval_detection(&trace));
    let costs = HumanCosts::default();
    assert_eq!(eval_reliability(&back, &costs), eval_reliability(&trace, &costs));
    assert!(eval_detection(&trace).positives > 0);
}
