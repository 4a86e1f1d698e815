//! CSV and gnuplot data files. Column meanings are listed in
//! `docs/reports.md`.

use std::fmt::Write as _;

use guard_core::eval::{AblationArm, AblationRow, EvalResult, Reliability};
use guard_core::sim::ScenarioTrace;

use crate::harness::{AblationRun, VarianceStudy};

fn csv_string<F>(header: &[&str], fill: F) -> String
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

/// Table-style letter of an arm, in ablation order.
pub fn arm_letter(arm: AblationArm) -> &'static str {
    match arm {
        AblationArm::BurnInOnly => "a",
        AblationArm::BasicSweep => "b",
        AblationArm::OnlineMonitoring => "c",
        AblationArm::EnhancedSweep => "d",
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    csv_string(
        &["arm", "label", "seeds", "mttf_h", "human_interval_h", "mfu_proxy"],
        |w| {
            for r in rows {
                w.write_record([
                    arm_letter(r.arm).to_string(),
                    r.label.clone(),
                    r.seeds.to_string(),
                    r.mttf_h.to_string(),
                    r.human_interval_h.to_string(),
                    r.mfu_proxy.to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

pub fn ablation_runs_csv(runs: &[AblationRun]) -> String {
    csv_string(
        &[
            "arm",
            "seed",
            "duration_h",
            "incidents",
            "mttf_h",
            "human_interval_h",
            "mean_step_s",
            "mfu_proxy",
        ],
        |w| {
            for r in runs {
                let x = &r.reliability;
                w.write_record([
                    arm_letter(r.arm).to_string(),
                    r.seed.to_string(),
                    x.duration_h.to_string(),
                    x.incidents.to_string(),
                    x.mttf_h.to_string(),
                    x.human_interval_h.to_string(),
                    x.mean_step_s.to_string(),
                    x.mfu_proxy.to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

/// Bar-chart data: one line per arm.
pub fn ablation_dat(rows: &[AblationRow]) -> String {
    let mut s = String::from("# index arm mttf_h human_interval_h mfu_proxy\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(s, "{i} {} {} {} {}", r.label, r.mttf_h, r.human_interval_h, r.mfu_proxy).expect("string write");
    }
    s
}

pub fn detection_csv(rows: &[(String, EvalResult)]) -> String {
    csv_string(
        &[
            "source",
            "positives",
            "negatives",
            "true_positives",
            "false_positives",
            "true_negatives",
            "false_negatives",
            "fpr",
            "fnr",
            "latency_mean_windows",
            "latency_median_windows",
            "latency_max_windows",
        ],
        |w| {
            for (name, r) in rows {
                let l = &r.detection_latency_windows;
                let lat = |v: f64| if l.count == 0 { "n/a".to_string() } else { v.to_string() };
                w.write_record([
                    name.clone(),
                    r.positives.to_string(),
                    r.negatives.to_string(),
                    r.true_positives.to_string(),
                    r.false_positives.to_string(),
                    r.true_negatives.to_string(),
                    r.false_negatives.to_string(),
                    opt(r.fpr),
                    opt(r.fnr),
                    lat(l.mean),
                    lat(l.median),
                    lat(l.max),
                ])?;
            }
            Ok(())
        },
    )
}

pub fn reliability_csv(rows: &[(String, Reliability)]) -> String {
    csv_string(
        &[
            "source",
            "duration_h",
            "incidents",
            "mttf_h",
            "human_interval_h",
            "mean_step_s",
            "mfu_proxy",
        ],
        |w| {
            for (name, r) in rows {
                w.write_record([
                    name.clone(),
                    r.duration_h.to_string(),
                    r.incidents.to_string(),
                    r.mttf_h.to_string(),
                    r.human_interval_h.to_string(),
                    r.mean_step_s.to_string(),
                    r.mfu_proxy.to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

pub fn variance_csv(study: &VarianceStudy) -> String {
    csv_string(&["seed", "detection_off_mean_step_s", "full_loop_mean_step_s"], |w| {
        for (i, seed) in study.seeds.iter().enumerate() {
            w.write_record([
                seed.to_string(),
                study.detection_off[i].to_string(),
                study.full_loop[i].to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Step-time series of one run: one line per executed step.
pub fn step_times_dat(trace: &ScenarioTrace) -> String {
    let mut s = String::from("# attempt step_index wall_time_s\n");
    for (i, r) in trace.steps.iter().enumerate() {
        writeln!(s, "{i} {} {}", r.step_index, r.wall_time_s).expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undefined_rates_are_marked() {
        let r = EvalResult {
            fpr: Some(0.0),
            fnr: None,
            negatives: 3,
            positives: 0,
            true_positives: 0,
            false_positives: 0,
            true_negatives: 3,
            false_negatives: 0,
            detection_latency_windows: Default::default(),
        };
        let csv = detection_csv(&[("x".to_string(), r)]);
        assert_eq!(csv.lines().nth(1), Some("x,0,3,0,0,3,0,0,n/a,n/a,n/a,n/a"));
    }
}
