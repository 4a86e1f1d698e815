//! JSONL metric wire format.
//!
//! One object per line with fields `node`, `gpu` (device metrics only),
//! `job` (step time only), `kind`, `t` and `v`.

use std::io::{BufRead, Write};

use guard_core::model::{validate_sample, MetricKind, MetricSample, NodeId, Subject, ValidationError};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

const FIELDS: [&str; 6] = ["node", "gpu", "job", "kind", "t", "v"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ValidationError,
    },
}

#[derive(Deserialize)]
struct Record {
    node: String,
    #[serde(default)]
    gpu: Option<i64>,
    #[serde(default)]
    job: Option<String>,
    kind: String,
    t: f64,
    v: f64,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    node: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    gpu: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    job: Option<&'a str>,
    kind: &'static str,
    t: f64,
    v: f64,
}

fn parse_err(line: usize, column: usize, reason: impl Into<String>) -> WireError {
    WireError::Parse(ParseError {
        line,
        column,
        reason: reason.into(),
    })
}

/// Parses one record. `line_no` is only used for error positions. In strict
/// mode unknown fields are rejected; otherwise they are ignored.
pub fn parse_metric_record(text: &str, line_no: usize, strict: bool) -> Result<MetricSample, WireError> {
    let map: Map<String, Value> =
        serde_json::from_str(text).map_err(|e| parse_err(line_no, e.column(), e.to_string()))?;
    if strict {
        if let Some(k) = map.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(parse_err(line_no, 0, format!("unknown field `{k}`")));
        }
    }
    let r: Record = serde_json::from_value(Value::Object(map)).map_err(|e| parse_err(line_no, 0, e.to_string()))?;
    let invalid = |source| WireError::Invalid { line: line_no, source };
    let kind =
        MetricKind::from_wire(&r.kind).ok_or_else(|| parse_err(line_no, 0, format!("unknown kind `{}`", r.kind)))?;
    let node = NodeId::new(r.node).map_err(invalid)?;
    let sample = if kind.is_job_level() {
        if r.gpu.is_some() {
            return Err(invalid(ValidationError::new("gpu", "not allowed on job metrics")));
        }
        let job = r
            .job
            .ok_or_else(|| invalid(ValidationError::new("job", "required for step_time_s")))?;
        MetricSample::step(node, job, r.t, r.v)
    } else {
        if r.job.is_some() {
            return Err(invalid(ValidationError::new("job", "only allowed on step_time_s")));
        }
        let gpu = r
            .gpu
            .ok_or_else(|| invalid(ValidationError::new("gpu", "required for device metrics")))?;
        let gpu = u8::try_from(gpu).map_err(|_| invalid(ValidationError::new("gpu", format!("{gpu} out of range"))))?;
        MetricSample::device(node, gpu, kind, r.t, r.v)
    };
    validate_sample(&sample).map_err(invalid)?;
    Ok(sample)
}

/// One record, without a trailing newline.
pub fn format_metric_record(sample: &MetricSample) -> String {
    let (gpu, job) = match &sample.subject {
        Subject::Device(d) => (Some(d.gpu_index), None),
        Subject::Job { job, .. } => (None, Some(job.as_str())),
    };
    let out = RecordOut {
        node: sample.subject.node().as_str(),
        gpu,
        job,
        kind: sample.kind.wire_name(),
        t: sample.timestamp,
        v: sample.value,
    };
    serde_json::to_string(&out).expect("plain struct serializes")
}

/// Reads a whole JSONL stream. Blank lines are skipped.
pub fn read_metrics<R: BufRead>(reader: R, strict: bool) -> Result<Vec<MetricSample>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_metric_record(&line, i + 1, strict)?);
    }
    Ok(out)
}

pub fn write_metrics<'a, W, I>(mut w: W, samples: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a MetricSample>,
{
    for s in samples {
        writeln!(w, "{}", format_metric_record(s))?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}
