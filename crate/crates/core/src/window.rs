//! Fixed-duration windowing of metric streams per (device, kind).

use alloc::vec::Vec;

use foldhash::fast::FixedState;
use hashbrown::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_sample, MetricKind, MetricSample, Subject, ValidationError};
use crate::stats::CompensatedSum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub window_len_s: f64,
    pub max_gap_windows: u32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            window_len_s: 60.0,
            max_gap_windows: 2,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.window_len_s.is_finite() && self.window_len_s > 0.0) {
            return Err(ValidationError::new("window_len_s", "must be positive"));
        }
        Ok(())
    }

    pub fn window_of(&self, t: f64) -> u64 {
        libm::floor(t / self.window_len_s) as u64
    }

    pub fn window_start(&self, window: u64) -> f64 {
        window as f64 * self.window_len_s
    }
}

/// Exact aggregates of one series over one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub subject: Subject,
    pub kind: MetricKind,
    pub window_index: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Value at the latest timestamp in the window (ties: the larger value).
    pub last: f64,
    pub count: u64,
}

/// A run of windows in which a series that had been reporting went silent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataGap {
    pub subject: Subject,
    pub kind: MetricKind,
    pub first_missing_window: u64,
    pub last_missing_window: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WindowOutput {
    Stats(WindowStats),
    Gap(DataGap),
}

impl WindowOutput {
    fn sort_key(&self) -> (u64, u8, &Subject, MetricKind) {
        match self {
            WindowOutput::Stats(s) => (s.window_index, 0, &s.subject, s.kind),
            WindowOutput::Gap(g) => (g.first_missing_window, 1, &g.subject, g.kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("out-of-order sample for {kind} on {node}: window {window} after window {latest}")]
    OutOfOrder {
        node: alloc::string::String,
        kind: MetricKind,
        window: u64,
        latest: u64,
    },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Clone, Debug)]
struct Accumulator {
    sum: CompensatedSum,
    min: f64,
    max: f64,
    last_t: f64,
    last_v: f64,
    count: u64,
}

impl Accumulator {
    fn new(t: f64, v: f64) -> Self {
        let mut sum = CompensatedSum::default();
        sum.add(v);
        Self {
            sum,
            min: v,
            max: v,
            last_t: t,
            last_v: v,
            count: 1,
        }
    }

    fn add(&mut self, t: f64, v: f64) {
        self.sum.add(v);
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        if t > self.last_t || (t == self.last_t && v > self.last_v) {
            self.last_t = t;
            self.last_v = v;
        }
        self.count += 1;
    }
}

#[derive(Clone, Debug)]
struct Series {
    subject: Subject,
    kind: MetricKind,
    /// Open windows, ascending. Rarely more than two.
    open: Vec<(u64, Accumulator)>,
    latest_window: Option<u64>,
    last_data_window: Option<u64>,
    gap_reported_after: Option<u64>,
}

/// Streaming window aggregator.
///
/// Samples must be non-decreasing in time per series, except that a sample
/// may land in the window just before the latest one seen for its series.
/// Windows are emitted when closed, either explicitly via [`close_until`] or
/// at [`finish`].
///
/// [`close_until`]: WindowAggregator::close_until
/// [`finish`]: WindowAggregator::finish
#[derive(Clone, Debug)]
pub struct WindowAggregator {
    cfg: IngestConfig,
    series: Vec<Series>,
    index: HashMap<(Subject, MetricKind), usize, FixedState>,
    /// Series indices in (subject, kind) order; rebuilt when series are added.
    order: Vec<usize>,
    closed_before: u64,
    max_window_seen: Option<u64>,
}

impl WindowAggregator {
    pub fn new(cfg: IngestConfig) -> Self {
        Self {
            cfg,
            series: Vec::new(),
            index: HashMap::with_hasher(FixedState::default()),
            order: Vec::new(),
            closed_before: 0,
            max_window_seen: None,
        }
    }

    pub fn config(&self) -> &IngestConfig {
        &self.cfg
    }

    pub fn push(&mut self, sample: MetricSample) -> Result<(), IngestError> {
        validate_sample(&sample)?;
        let window = self.cfg.window_of(sample.timestamp);
        let key = (sample.subject, sample.kind);
        let series = match self.index.get(&key) {
            Some(&i) => &mut self.series[i],
            None => {
                self.index.insert(key.clone(), self.series.len());
                self.series.push(Series {
                    subject: key.0,
                    kind: key.1,
                    open: Vec::new(),
                    latest_window: None,
                    last_data_window: None,
                    gap_reported_after: None,
                });
                self.series.last_mut().expect("just pushed")
            }
        };
        let latest = series.latest_window.unwrap_or(window);
        if window + 1 < latest || window < self.closed_before {
            return Err(IngestError::OutOfOrder {
                node: series.subject.node().as_str().into(),
                kind: series.kind,
                window,
                latest: latest.max(self.closed_before),
            });
        }
        series.latest_window = Some(latest.max(window));
        match series.open.iter().position(|(w, _)| *w >= window) {
            Some(i) if series.open[i].0 == window => series.open[i].1.add(sample.timestamp, sample.value),
            Some(i) => series
                .open
                .insert(i, (window, Accumulator::new(sample.timestamp, sample.value))),
            None => series
                .open
                .push((window, Accumulator::new(sample.timestamp, sample.value))),
        }
        self.max_window_seen = Some(self.max_window_seen.map_or(window, |m| m.max(window)));
        Ok(())
    }

    /// Closes every window with index `< window` and returns their outputs,
    /// sorted by window, then subject and kind.
    pub fn close_until(&mut self, window: u64) -> Vec<WindowOutput> {
        let max_gap = self.cfg.max_gap_windows as u64;
        let mut out = Vec::new();
        if self.order.len() != self.series.len() {
            let series = &self.series;
            self.order = (0..series.len()).collect();
            self.order
                .sort_by(|&a, &b| (&series[a].subject, series[a].kind).cmp(&(&series[b].subject, series[b].kind)));
        }
        for &i in &self.order {
            let series = &mut self.series[i];
            let (subject, kind) = (&series.subject, &series.kind);
            let ready = series.open.partition_point(|(w, _)| *w < window);
            for (w, acc) in series.open.drain(..ready) {
                if let Some(prev) = series.last_data_window {
                    if w - prev - 1 > max_gap && series.gap_reported_after != Some(prev) {
                        out.push(WindowOutput::Gap(DataGap {
                            subject: subject.clone(),
                            kind: *kind,
                            first_missing_window: prev + 1,
                            last_missing_window: w - 1,
                        }));
                    }
                }
                series.last_data_window = Some(w);
                out.push(WindowOutput::Stats(WindowStats {
                    subject: subject.clone(),
                    kind: *kind,
                    window_index: w,
                    mean: acc.sum.value() / acc.count as f64,
                    min: acc.min,
                    max: acc.max,
                    last: acc.last_v,
                    count: acc.count,
                }));
            }
            // A silent series with nothing left open: report an ongoing gap once.
            if let Some(prev) = series.last_data_window {
                let closed_last = window.saturating_sub(1);
                if series.open.is_empty()
                    && closed_last > prev
                    && closed_last - prev > max_gap
                    && series.gap_reported_after != Some(prev)
                {
                    series.gap_reported_after = Some(prev);
                    out.push(WindowOutput::Gap(DataGap {
                        subject: subject.clone(),
                        kind: *kind,
                        first_missing_window: prev + 1,
                        last_missing_window: closed_last,
                    }));
                }
            }
        }
        self.closed_before = self.closed_before.max(window);
        // Already in (subject, kind) order; a stable sort on the rest
        // completes the ordering.
        out.sort_by_key(|o| {
            let (w, tag, _, _) = o.sort_key();
            (w, tag)
        });
        out
    }

    /// Closes every window that ended at or before time `t`.
    pub fn close_through(&mut self, t: f64) -> Vec<WindowOutput> {
        let w = self.cfg.window_of(t);
        self.close_until(w)
    }

    /// Closes everything that is still open.
    pub fn finish(mut self) -> Vec<WindowOutput> {
        match self.max_window_seen {
            Some(m) => self.close_until(m + 1),
            None => Vec::new(),
        }
    }
}

/// Batch form of [`WindowAggregator`].
pub fn window_aggregate<I>(samples: I, cfg: IngestConfig) -> Result<Vec<WindowOutput>, IngestError>
where
    I: IntoIterator<Item = MetricSample>,
{
    let mut agg = WindowAggregator::new(cfg);
    for s in samples {
        agg.push(s)?;
    }
    Ok(agg.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeId;
    use alloc::vec;

    fn n(id: &str) -> NodeId {
        NodeId::new(id).unwrap()
    }

    fn stats(out: &[WindowOutput]) -> Vec<&WindowStats> {
        out.iter()
            .filter_map(|o| match o {
                WindowOutput::Stats(s) => Some(s),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn healthy_step_level_window() {
        let samples = vec![
            MetricSample::step(n("n1"), "job0", 10.0, 8.4),
            MetricSample::step(n("n1"), "job0", 18.4, 8.4),
        ];
        let out = window_aggregate(samples, IngestConfig::default()).unwrap();
        let s = stats(&out);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].window_index, 0);
        assert_eq!((s[0].mean, s[0].min, s[0].max, s[0].count), (8.4, 8.4, 8.4, 2));
    }

    #[test]
    fn empty_stream_is_empty() {
        let out = window_aggregate(Vec::new(), IngestConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn one_window_regression_is_merged() {
        let cfg = IngestConfig::default();
        let mut agg = WindowAggregator::new(cfg);
        let mk = |t, v| MetricSample::device(n("n1"), 0, MetricKind::GpuTemperature, t, v);
        agg.push(mk(61.0, 50.0)).unwrap();
        agg.push(mk(59.0, 52.0)).unwrap();
        let err = {
            agg.push(mk(185.0, 50.0)).unwrap();
            agg.push(mk(30.0, 50.0)).unwrap_err()
        };
        assert!(matches!(err, IngestError::OutOfOrder { .. }));
        let out = agg.finish();
        assert_eq!(stats(&out).len(), 3);
    }

    #[test]
    fn closed_windows_reject_late_samples() {
        let mut agg = WindowAggregator::new(IngestConfig::default());
        let mk = |t| MetricSample::device(n("n1"), 0, MetricKind::GpuUtilization, t, 0.9);
        agg.push(mk(10.0)).unwrap();
        assert_eq!(agg.close_through(60.0).len(), 1);
        assert!(agg.push(mk(50.0)).is_err());
    }

    #[test]
    fn silence_emits_gap_marker() {
        let cfg = IngestConfig::default();
        let mk = |node: &str, t| MetricSample::device(n(node), 2, MetricKind::NicLinkUp, t, 1.0);
        let mut samples = vec![mk("a", 0.0), mk("b", 0.0)];
        // "a" keeps reporting, "b" goes silent for windows 1..=4 then returns.
        for w in 1..6 {
            samples.push(mk("a", w as f64 * 60.0));
        }
        samples.push(mk("b", 300.0));
        samples.sort_by(|x, y| x.timestamp.total_cmp(&y.timestamp));
        let out = window_aggregate(samples, cfg).unwrap();
        let gaps: Vec<&DataGap> = out
            .iter()
            .filter_map(|o| match o {
                WindowOutput::Gap(g) => Some(g),
                _ => None,
            })
            .collect();
        assert_eq!(gaps.len(), 1);
        assert_eq!(gaps[0].subject.node().as_str(), "b");
        assert_eq!((gaps[0].first_missing_window, gaps[0].last_missing_window), (1, 4));
    }

    #[test]
    fn short_silence_is_not_a_gap() {
        let mk = |t| MetricSample::device(n("a"), 0, MetricKind::NicLinkUp, t, 1.0);
        let out = window_aggregate(vec![mk(0.0), mk(180.0)], IngestConfig::default()).unwrap();
        assert!(out.iter().all(|o| matches!(o, WindowOutput::Stats(_))));
    }

    #[test]
    fn streaming_reports_ongoing_gap_once() {
        let mut agg = WindowAggregator::new(IngestConfig::default());
        agg.push(MetricSample::device(n("a"), 0, MetricKind::NicLinkUp, 0.0, 1.0))
            .unwrap();
        let mut gaps = 0;
        for w in 1..10 {
            gaps += agg
                .close_until(w)
                .iter()
                .filter(|o| matches!(o, WindowOutput::Gap(_)))
                .count();
        }
        assert_eq!(gaps, 1);
    }
}
