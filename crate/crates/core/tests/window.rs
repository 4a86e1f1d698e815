use std::collections::BTreeMap;

use guard_core::model::{MetricKind, MetricSample, NodeId, Subject};
use guard_core::window::{window_aggregate, IngestConfig, IngestError, WindowAggregator, WindowOutput, WindowStats};
use proptest::prelude::*;

fn cfg() -> IngestConfig {
    IngestConfig::default()
}

/// Samples sorted by time across a few devices and kinds.
fn stream() -> impl Strategy<Value = Vec<MetricSample>> {
    proptest::collection::vec((0usize..3, 0u8..3, 0usize..3, 0.0..600.0f64, 0.0..1.0f64), 1..200).prop_map(|raw| {
        let kinds = [
            MetricKind::GpuUtilization,
            MetricKind::GpuTemperature,
            MetricKind::StepTime,
        ];
        let mut v: Vec<MetricSample> = raw
            .into_iter()
            .map(|(node, gpu, k, t, x)| {
                let node = NodeId::new(format!("n{node}")).unwrap();
                match kinds[k] {
                    MetricKind::StepTime => MetricSample::step(node, "job0", t, 1.0 + x),
                    kind => MetricSample::device(node, gpu, kind, t, x),
                }
            })
            .collect();
        v.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        v
    })
}

fn stats(outputs: &[WindowOutput]) -> Vec<&WindowStats> {
    outputs
        .iter()
        .filter_map(|o| match o {
            WindowOutput::Stats(s) => Some(s),
            WindowOutput::Gap(_) => None,
        })
        .collect()
}

type Key = (Subject, MetricKind, u64);

/// Direct group-by over the samples.
fn oracle(samples: &[MetricSample], cfg: &IngestConfig) -> BTreeMap<Key, (u64, f64, f64, f64)> {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for s in samples {
        let w = (s.timestamp / cfg.window_len_s).floor() as u64;
        groups.entry((s.subject.clone(), s.kind, w)).or_default().push(s.value);
    }
    groups
        .into_iter()
        .map(|(k, vs)| {
            let mean = vs.iter().sum::<f64>() / vs.len() as f64;
            let min = vs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (k, (vs.len() as u64, mean, min, max))
        })
        .collect()
}

proptest! {
    #[test]
    fn windowing_is_a_partition(samples in stream()) {
        let out = window_aggregate(samples.clone(), cfg()).unwrap();
        let total: u64 = stats(&out).iter().map(|s| s.count).sum();
        prop_assert_eq!(total, samples.len() as u64);
    }

    #[test]
    fn matches_group_by_oracle(samples in stream()) {
        let out = window_aggregate(samples.clone(), cfg()).unwrap();
        let want = oracle(&samples, &cfg());
        let got: BTreeMap<Key, (u64, f64, f64, f64)> = stats(&out)
            .iter()
            .map(|s| ((s.subject.clone(), s.kind, s.window_index), (s.count, s.mean, s.min, s.max)))
            .collect();
        prop_assert_eq!(got.len(), want.len());
        for (k, (count, mean, min, max)) in &want {
            let g = got.get(k).expect("window present");
            prop_assert_eq!(g.0, *count);
            prop_assert!((g.1 - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            prop_assert_eq!((g.2, g.3), (*min, *max));
        }
    }

    #[test]
    fn order_within_a_window_does_not_matter(samples in stream(), seed in any::<u64>()) {
        // Shuffle samples inside each window; windows stay in order.
        let w = |s: &MetricSample| (s.timestamp / cfg().window_len_s).floor() as u64;
        let mut shuffled = samples.clone();
        let mut x = seed | 1;
        shuffled.sort_by_cached_key(|s| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (w(s), x)
        });
        let a = window_aggregate(samples, cfg()).unwrap();
        let b = window_aggregate(shuffled, cfg()).unwrap();
        let key = |s: &&WindowStats| (s.subject.clone(), s.kind, s.window_index, s.count, s.min, s.max, s.last);
        let sa: Vec<_> = stats(&a).iter().map(key).collect();
        let sb: Vec<_> = stats(&b).iter().map(key).collect();
        prop_assert_eq!(sa, sb);
        for (x, y) in stats(&a).iter().zip(stats(&b).iter()) {
            prop_assert!((x.mean - y.mean).abs() <= 1e-12 * x.mean.abs().max(1.0));
        }
    }

    #[test]
    fn streaming_close_matches_batch(samples in stream()) {
        let mut agg = WindowAggregator::new(cfg());
        let mut out = Vec::new();
        for s in samples.clone() {
            let w = cfg().window_of(s.timestamp);
            agg.push(s).unwrap();
            out.extend(agg.close_until(w.saturating_sub(1)));
        }
        out.extend(agg.finish());
        let batch = window_aggregate(samples, cfg()).unwrap();
        let mut a: Vec<String> = stats(&out).iter().map(|s| format!("{s:?}")).collect();
        let mut b: Vec<String> = stats(&batch).iter().map(|s| format!("{s:?}")).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn regression_beyond_one_window_is_rejected() {
    let n = NodeId::new("a").unwrap();
    let mut agg = WindowAggregator::new(cfg());
    agg.push(MetricSample::device(
        n.clone(),
        0,
        MetricKind::GpuTemperature,
        200.0,
        50.0,
    ))
    .unwrap();
    // One window back is tolerated.
    agg.push(MetricSample::device(
        n.clone(),
        0,
        MetricKind::GpuTemperature,
        150.0,
        50.0,
    ))
    .unwrap();
    let err = agg
        .push(MetricSample::device(n, 0, MetricKind::GpuTemperature, 10.0, 50.0))
        .unwrap_err();
    assert!(matches!(
        err,
        IngestError::OutOfOrder {
            window: 0,
            latest: 3,
            ..
        }
    ));
}

#[test]
fn silent_series_reports_a_gap() {
    let n = NodeId::new("a").unwrap();
    let samples = vec![
        MetricSample::device(n.clone(), 0, MetricKind::NicLinkUp, 0.0, 1.0),
        MetricSample::device(n, 0, MetricKind::NicLinkUp, 400.0, 1.0),
    ];
    let out = window_aggregate(samples, cfg()).unwrap();
    let gaps: Vec<_> = out
        .iter()
        .filter_map(|o| match o {
            WindowOutput::Gap(g) => Some((g.first_missing_window, g.last_missing_window)),
            _ => None,
        })
        .collect();
    assert_eq!(gaps, vec![(1, 5)]);
}
