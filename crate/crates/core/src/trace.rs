//! Chrome trace event export and re-import.
//!
//! Timestamps are integer microseconds so viewers render them; the
//! sub-microsecond residue rides along in `args.ts_frac_us` and
//! `args.dur_frac_us`, which makes `ts + ts_frac_us` reproduce the original
//! microsecond value bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::mapping::EngineKind;
use crate::scheduler::Timeline;

pub const PROCESS_NAME: &str = "hetsim";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("trace is not valid JSON: {0}")]
    Json(String),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

/// A complete ("X") event with its exact microsecond times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub name: String,
    pub cat: String,
    pub tid: u64,
    pub node: Option<u64>,
    pub start_us: f64,
    pub dur_us: f64,
    pub flops: Option<u64>,
    pub bytes: Option<u64>,
}

impl TraceEvent {
    pub fn end_us(&self) -> f64 {
        self.start_us + self.dur_us
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedTrace {
    pub events: Vec<TraceEvent>,
    /// Lane names from `thread_name` metadata, keyed by tid.
    pub lanes: BTreeMap<u64, String>,
}

impl ParsedTrace {
    pub fn lane(&self, tid: u64) -> Vec<&TraceEvent> {
        let mut events: Vec<&TraceEvent> = self.events.iter().filter(|e| e.tid == tid).collect();
        events.sort_by(|a, b| a.start_us.total_cmp(&b.start_us));
        events
    }

    pub fn total_duration_us(&self) -> f64 {
        self.events.iter().map(|e| e.dur_us).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TraceViolation {
    Overlap { tid: u64, first: String, second: String },
    NegativeDuration { name: String },
    UnknownLane { tid: u64 },
}

fn split_us(x: f64) -> (u64, f64) {
    let whole = x.floor();
    (whole as u64, x - whole)
}

/// Microsecond start and duration of every interval, in timeline order.
pub fn interval_micros(timeline: &Timeline) -> Vec<(f64, f64)> {
    timeline
        .intervals
        .iter()
        .map(|iv| {
            let start = iv.start * 1e6;
            (start, iv.end * 1e6 - start)
        })
        .collect()
}

fn metadata_events() -> Vec<Value> {
    let mut events = vec![json!({
        "name": "process_name", "ph": "M", "pid": 0, "tid": 0,
        "args": {"name": PROCESS_NAME}
    })];
    for engine in EngineKind::ALL {
        events.push(json!({
            "name": "thread_name", "ph": "M", "pid": 0, "tid": engine.index(),
            "args": {"name": engine.to_string()}
        }));
        events.push(json!({
            "name": "thread_sort_index", "ph": "M", "pid": 0, "tid": engine.index(),
            "args": {"sort_index": engine.index()}
        }));
    }
    events
}

pub fn to_chrome_trace(timeline: &Timeline) -> Value {
    let mut events = metadata_events();
    for (iv, (start_us, dur_us)) in timeline.intervals.iter().zip(interval_micros(timeline)) {
        let (ts, ts_frac) = split_us(start_us);
        let (dur, dur_frac) = split_us(dur_us);
        events.push(json!({
            "name": iv.label,
            "cat": iv.class.map_or("task", |c| c.name()),
            "ph": "X",
            "ts": ts,
            "dur": dur,
            "pid": 0,
            "tid": iv.engine.index(),
            "args": {
                "node": iv.node.0,
                "flops": iv.flops,
                "bytes": iv.bytes,
                "ts_frac_us": ts_frac,
                "dur_frac_us": dur_frac,
            }
        }));
    }
    json!({ "traceEvents": events, "displayTimeUnit": "ms" })
}

pub fn to_chrome_trace_string(timeline: &Timeline) -> String {
    serde_json::to_string(&to_chrome_trace(timeline)).expect("trace serializes")
}

fn field<'a>(event: &'a Value, key: &str, index: usize) -> Result<&'a Value, TraceError> {
    event
        .get(key)
        .ok_or_else(|| TraceError::Malformed(format!("event {index} has no `{key}`")))
}

fn as_u64(v: &Value, key: &str, index: usize) -> Result<u64, TraceError> {
    v.as_u64()
        .ok_or_else(|| TraceError::Malformed(format!("event {index}: `{key}` must be a non-negative integer")))
}

fn number(v: &Value, key: &str, index: usize) -> Result<f64, TraceError> {
    match v.as_f64() {
        Some(x) if x.is_finite() && x >= 0.0 => Ok(x),
        _ => Err(TraceError::Malformed(format!(
            "event {index}: `{key}` must be a non-negative number"
        ))),
    }
}

/// Reads an object-form trace. Complete events are collected with their
/// residues folded back in; metadata names the lanes; other phases are
/// ignored.
pub fn parse_chrome_trace(text: &str) -> Result<ParsedTrace, TraceError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| TraceError::Json(e.to_string()))?;
    let events = doc
        .get("traceEvents")
        .and_then(Value::as_array)
        .ok_or_else(|| TraceError::Malformed("expected an object with a `traceEvents` array".into()))?;

    let mut out = ParsedTrace::default();
    for (i, event) in events.iter().enumerate() {
        if !event.is_object() {
            return Err(TraceError::Malformed(format!("event {i} is not an object")));
        }
        let ph = field(event, "ph", i)?
            .as_str()
            .ok_or_else(|| TraceError::Malformed(format!("event {i}: `ph` must be a string")))?;
        match ph {
            "X" => {
                let name = field(event, "name", i)?
                    .as_str()
                    .ok_or_else(|| TraceError::Malformed(format!("event {i}: `name` must be a string")))?
                    .to_string();
                let ts = number(field(event, "ts", i)?, "ts", i)?;
                let dur = number(field(event, "dur", i)?, "dur", i)?;
                let tid = as_u64(field(event, "tid", i)?, "tid", i)?;
                let args = event.get("args");
                let arg = |key: &str| args.and_then(|a| a.get(key));
                let ts_frac = arg("ts_frac_us").map_or(Ok(0.0), |v| number(v, "ts_frac_us", i))?;
                let dur_frac = arg("dur_frac_us").map_or(Ok(0.0), |v| number(v, "dur_frac_us", i))?;
                out.events.push(TraceEvent {
                    name,
                    cat: event.get("cat").and_then(Value::as_str).unwrap_or("").to_string(),
                    tid,
                    node: arg("node").and_then(Value::as_u64),
                    start_us: ts + ts_frac,
                    dur_us: dur + dur_frac,
                    flops: arg("flops").and_then(Value::as_u64),
                    bytes: arg("bytes").and_then(Value::as_u64),
                });
            }
            "M" if event.get("name").and_then(Value::as_str) == Some("thread_name") => {
                let tid = as_u64(field(event, "tid", i)?, "tid", i)?;
                if let Some(name) = event.pointer("/args/name").and_then(Value::as_str) {
                    out.lanes.insert(tid, name.to_string());
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Per-lane exclusivity, checked on the reconstructed microsecond times.
/// Boundaries may touch within a few ulps, the rounding left by converting
/// seconds to microseconds.
pub fn validate_trace(trace: &ParsedTrace) -> Result<(), Vec<TraceViolation>> {
    let mut out = Vec::new();
    let mut tids: Vec<u64> = trace.events.iter().map(|e| e.tid).collect();
    tids.sort_unstable();
    tids.dedup();
    for tid in tids {
        if !trace.lanes.is_empty() && !trace.lanes.contains_key(&tid) {
            out.push(TraceViolation::UnknownLane { tid });
        }
        let lane = trace.lane(tid);
        for e in &lane {
            if e.dur_us < 0.0 {
                out.push(TraceViolation::NegativeDuration { name: e.name.clone() });
            }
        }
        for w in lane.windows(2) {
            let end = w[0].end_us();
            let slack = 4.0 * f64::EPSILON * end.abs().max(w[1].start_us.abs());
            if w[1].start_us < end - slack {
                out.push(TraceViolation::Overlap {
                    tid,
                    first: w[0].name.clone(),
                    second: w[1].name.clone(),
                });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{schedule_tasks, ScheduleMode, Task};

    #[test]
    fn empty_timeline_has_metadata_only() {
        let tl = schedule_tasks(&[], ScheduleMode::Lookahead).unwrap();
        let doc = to_chrome_trace(&tl);
        let events = doc["traceEvents"].as_array().unwrap();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| e["ph"] == "M"));
        let parsed = parse_chrome_trace(&doc.to_string()).unwrap();
        assert!(parsed.events.is_empty());
        assert_eq!(parsed.lanes[&0], "MME");
        assert_eq!(parsed.lanes[&2], "DMA");
    }

    #[test]
    fn five_ms_on_mme() {
        let tl = schedule_tasks(&[Task::new(0, EngineKind::MME, 5e-3, vec![])], ScheduleMode::Naive).unwrap();
        let doc = to_chrome_trace(&tl);
        let x: Vec<&Value> = doc["traceEvents"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|e| e["ph"] == "X")
            .collect();
        assert_eq!(x.len(), 1);
        assert_eq!(x[0]["ts"], 0);
        assert_eq!(x[0]["dur"], 5000);
        assert_eq!(x[0]["tid"], 0);
        assert_eq!(x[0]["pid"], 0);
    }

    #[test]
    fn residues_restore_exact_micros() {
        for x in [0.0, 1e-6, 0.1, 1.0 / 3.0, 12345.678901, 1e9 + 0.5] {
            let (whole, frac) = split_us(x);
            assert_eq!(whole as f64 + frac, x);
        }
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(parse_chrome_trace("[]"), Err(TraceError::Malformed(_))));
        assert!(matches!(parse_chrome_trace("{"), Err(TraceError::Json(_))));
        assert!(parse_chrome_trace(r#"{"traceEvents":[{"ph":"X","name":"a","ts":-1,"dur":1,"tid":0}]}"#).is_err());
        assert!(parse_chrome_trace(r#"{"traceEvents":[{"ph":"X","name":"a","ts":0,"tid":0}]}"#).is_err());
        assert!(parse_chrome_trace(r#"{"traceEvents":[1]}"#).is_err());
    }

    #[test]
    fn validator_flags_overlap() {
        let text = r#"{"traceEvents":[
            {"ph":"X","name":"a","ts":0,"dur":10,"tid":1},
            {"ph":"X","name":"b","ts":5,"dur":10,"tid":1},
            {"ph":"X","name":"c","ts":5,"dur":10,"tid":0}]}"#;
        let parsed = parse_chrome_trace(text).unwrap();
        let errs = validate_trace(&parsed).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(matches!(&errs[0], TraceViolation::Overlap { tid: 1, .. }));
    }
}
