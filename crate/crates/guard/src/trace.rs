//! Trace directories: the replayable record of one scenario run.
//!
//! | file            | contents                                    |
//! |-----------------|---------------------------------------------|
//! | `metrics.jsonl` | metric samples in the wire format           |
//! | `steps.jsonl`   | one record per executed step                |
//! | `events.jsonl`  | the event log                               |
//! | `labels.json`   | ground-truth fault intervals                |
//! | `service.json`  | when each node was serving the job          |
//! | `summary.json`  | job id and run totals                       |
//! | `config.json`   | the effective scenario config               |

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use guard_core::event::Event;
use guard_core::model::StepTimeRecord;
use guard_core::sim::{FaultLabel, RunSummary, ScenarioConfig, ScenarioTrace, ServiceSpan};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{GuardError, Result};
use crate::wire;

pub const TRACE_FILES: [&str; 7] = [
    "metrics.jsonl",
    "steps.jsonl",
    "events.jsonl",
    "labels.json",
    "service.json",
    "summary.json",
    "config.json",
];

#[derive(Serialize, Deserialize)]
struct Meta {
    job_id: String,
    summary: RunSummary,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| GuardError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).expect("trace records serialize");
        w.write_all(b"\n").map_err(|e| GuardError::io(path, e))?;
    }
    w.flush().map_err(|e| GuardError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).expect("trace records serialize");
    w.write_all(b"\n").map_err(|e| GuardError::io(path, e))?;
    w.flush().map_err(|e| GuardError::io(path, e))
}

/// Writes a trace into `dir`, creating it if needed.
pub fn write_trace(dir: &Path, trace: &ScenarioTrace, cfg: &ScenarioConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GuardError::io(dir, e))?;
    let p = dir.join("metrics.jsonl");
    let mut w = create(&p)?;
    wire::write_metrics(&mut w, &trace.metrics).map_err(|e| GuardError::io(&p, e))?;
    w.flush().map_err(|e| GuardError::io(&p, e))?;
    write_jsonl(&dir.join("steps.jsonl"), &trace.steps)?;
    write_events(&dir.join("events.jsonl"), &trace.events)?;
    write_json(&dir.join("labels.json"), &trace.labels)?;
    write_json(&dir.join("service.json"), &trace.service)?;
    write_json(
        &dir.join("summary.json"),
        &Meta {
            job_id: trace.job_id.clone(),
            summary: trace.summary.clone(),
        },
    )?;
    write_json(&dir.join("config.json"), cfg)
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    write_jsonl(path, events)
}

fn trace_err(path: &Path, reason: impl ToString) -> GuardError {
    GuardError::Trace {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| trace_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| trace_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| trace_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| trace_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| trace_err(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    read_jsonl(path)
}

/// Reads a trace directory. Metrics are skipped unless `with_metrics`.
pub fn read_trace(dir: &Path, with_metrics: bool) -> Result<ScenarioTrace> {
    let meta: Meta = read_json(&dir.join("summary.json"))?;
    let metrics = if with_metrics {
        let p = dir.join("metrics.jsonl");
        let f = File::open(&p).map_err(|e| trace_err(&p, e))?;
        wire::read_metrics(BufReader::new(f), true).map_err(|e| trace_err(&p, e))?
    } else {
        Vec::new()
    };
    let steps: Vec<StepTimeRecord> = read_jsonl(&dir.join("steps.jsonl"))?;
    let labels: Vec<FaultLabel> = read_json(&dir.join("labels.json"))?;
    let service: Vec<ServiceSpan> = read_json(&dir.join("service.json"))?;
    Ok(ScenarioTrace {
        job_id: meta.job_id,
        steps,
        metrics,
        events: read_events(&dir.join("events.jsonl"))?,
        labels,
        service,
        summary: meta.summary,
    })
}

/// Paths of all trace files in `dir`.
pub fn trace_paths(dir: &Path) -> Vec<PathBuf> {
    TRACE_FILES.iter().map(|f| dir.join(f)).collect()
}
