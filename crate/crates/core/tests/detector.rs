use guard_core::detector::{
    classify_severity, detect_stream, deviates, flag_decision, peer_baseline, DetectorConfig, DeviationReport, KindSet,
    SeverityTier,
};
use guard_core::model::{Harmful, MetricKind, MetricSample, NodeId};
use guard_core::rng::{stream, Stream};
use guard_core::sim::{emit_metrics, MetricsModel, NodeProfile, StepModel};
use guard_core::window::IngestConfig;
use proptest::prelude::*;

fn n(id: &str) -> NodeId {
    NodeId::new(id).unwrap()
}

fn kind() -> impl Strategy<Value = MetricKind> {
    proptest::sample::select(MetricKind::ALL.to_vec())
}

/// Margin of a deviation decision: excess over threshold, in units of the
/// threshold. Near zero the decision is at the mercy of rounding.
fn margin(kind: MetricKind, value: f64, median: f64, scale: f64, z: f64) -> f64 {
    let excess = match kind.harmful() {
        Harmful::High => value - median,
        Harmful::Low => median - value,
    };
    (excess - z * scale) / (z * scale).max(1e-300)
}

proptest! {
    #[test]
    fn flagging_is_scale_equivariant(
        kind in kind(),
        peers in proptest::collection::vec(0.1..100.0f64, 2..20),
        value in 0.1..100.0f64,
        floor in 0.001..5.0f64,
        c in 0.01..100.0f64,
    ) {
        let b = peer_baseline(&peers, kind, 0).unwrap();
        prop_assume!(margin(kind, value, b.median, b.mad.max(floor), 3.0).abs() > 1e-9);
        let scaled: Vec<f64> = peers.iter().map(|v| v * c).collect();
        let bs = peer_baseline(&scaled, kind, 0).unwrap();
        prop_assert_eq!(
            deviates(kind, value, &b, 3.0, floor),
            deviates(kind, value * c, &bs, 3.0, floor * c)
        );
    }

    #[test]
    fn larger_deviation_never_unflags(
        kind in kind(),
        peers in proptest::collection::vec(0.0..100.0f64, 2..20),
        value in 0.0..100.0f64,
        extra in 0.0..100.0f64,
        floor in 0.001..5.0f64,
    ) {
        let b = peer_baseline(&peers, kind, 0).unwrap();
        let worse = match kind.harmful() {
            Harmful::High => value + extra,
            Harmful::Low => value - extra,
        };
        if deviates(kind, value, &b, 3.0, floor) {
            prop_assert!(deviates(kind, worse, &b, 3.0, floor));
        }
    }

    #[test]
    fn severity_is_monotone(
        history in proptest::collection::vec(-0.5..1.0f64, 0..8),
        bumps in proptest::collection::vec(0.0..0.5f64, 8),
    ) {
        let cfg = DetectorConfig::default();
        let raised: Vec<f64> = history.iter().zip(&bumps).map(|(h, b)| h + b).collect();
        prop_assert!(classify_severity(&raised, &cfg) >= classify_severity(&history, &cfg));
    }
}

/// Brute-force first qualifying window over a report sequence.
fn oracle_flag(reports: &[DeviationReport], cfg: &DetectorConfig) -> Option<(u64, SeverityTier)> {
    let k = cfg.k_windows;
    for end in 0..reports.len() {
        if end + 1 < k {
            continue;
        }
        let run = &reports[end + 1 - k..=end];
        let mut consecutive = true;
        for i in 1..run.len() {
            consecutive &= run[i].window_index == run[i - 1].window_index + 1;
        }
        if !consecutive {
            continue;
        }
        let stall = run.iter().any(|r| r.relative_step_slowdown == f64::INFINITY);
        let min = run
            .iter()
            .map(|r| r.relative_step_slowdown)
            .fold(f64::INFINITY, f64::min);
        let severity = if stall || min >= cfg.severe_lo {
            SeverityTier::Severe
        } else if min >= cfg.moderate_lo {
            SeverityTier::Moderate
        } else {
            SeverityTier::NoImpact
        };
        let hardware = run.iter().all(|r| r.flagged.len() >= cfg.min_signals);
        if hardware || severity == SeverityTier::Severe {
            return Some((run[k - 1].window_index, severity));
        }
    }
    None
}

fn reports() -> impl Strategy<Value = Vec<DeviationReport>> {
    let one = (
        0u64..3,
        0usize..4,
        prop_oneof![
            4 => -0.1..0.35f64,
            1 => Just(f64::INFINITY),
        ],
    );
    proptest::collection::vec(one, 0..16).prop_map(|raw| {
        let mut w = 0;
        raw.into_iter()
            .map(|(skip, signals, slow)| {
                w += if skip == 2 { 2 } else { 1 };
                let mut flagged = KindSet::empty();
                for k in MetricKind::ALL.iter().take(signals) {
                    flagged.insert(*k);
                }
                DeviationReport {
                    node: n("a"),
                    window_index: w,
                    flagged,
                    relative_step_slowdown: slow,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn flag_decision_matches_brute_force(reports in reports()) {
        let cfg = DetectorConfig::default();
        let got = flag_decision(&reports, &cfg).map(|f| (f.window, f.severity));
        prop_assert_eq!(got, oracle_flag(&reports, &cfg));
    }
}

#[test]
fn identical_streams_never_flag() {
    let step = StepModel::default();
    let model = MetricsModel::default();
    for seed in 0..5 {
        let mut rng = stream(seed, Stream::Metrics);
        let p = NodeProfile::healthy(n("proto"), 55.0);
        let mut proto = Vec::new();
        let mut t = 0.0;
        while t < 3600.0 {
            emit_metrics(&p, t, &model, &step, 1, &mut rng, &mut proto);
            proto.push(MetricSample::step(n("proto"), "job0", t, 8.4 + t.sin() * 0.01));
            t += 30.0;
        }
        let mut samples = Vec::new();
        for s in &proto {
            for i in 0..16 {
                let mut c = s.clone();
                c.subject = match c.subject {
                    guard_core::model::Subject::Device(mut d) => {
                        d.node = n(&format!("n{i:02}"));
                        guard_core::model::Subject::Device(d)
                    }
                    guard_core::model::Subject::Job { job, .. } => guard_core::model::Subject::Job {
                        node: n(&format!("n{i:02}")),
                        job,
                    },
                };
                samples.push(c);
            }
        }
        let flags = detect_stream(samples, IngestConfig::default(), DetectorConfig::default()).unwrap();
        assert!(flags.is_empty(), "seed {seed}: {flags:?}");
    }
}

#[test]
fn throttled_gpu_is_flagged_on_clock_and_temperature() {
    let step = StepModel::default();
    let model = MetricsModel::default();
    let mut rng = stream(4, Stream::Metrics);
    let mut samples = Vec::new();
    let mut t = 0.0;
    while t < 600.0 {
        for i in 0..8 {
            let mut p = NodeProfile::healthy(n(&format!("n{i}")), 55.0);
            if i == 3 {
                p.steady_temp_c[3] = 77.0;
            }
            emit_metrics(&p, t, &model, &step, 1, &mut rng, &mut samples);
        }
        t += 30.0;
    }
    let flags = detect_stream(samples, IngestConfig::default(), DetectorConfig::default()).unwrap();
    assert!(!flags.is_empty());
    assert!(flags.iter().all(|f| f.node == n("n3")));
    let kinds = flags[0].kinds;
    assert!(kinds.contains(MetricKind::GpuClockFrequency) && kinds.contains(MetricKind::GpuTemperature));
    assert_eq!(flags[0].window, 2);
}
