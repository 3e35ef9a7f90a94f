//! Utilization reports and scaling fits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::OpClass;
use crate::mapping::EngineKind;
use crate::scheduler::{idle_fraction, ScheduleMode, Timeline};

/// Idle periods shorter than this are left out of gap lists (they still
/// count towards idle time).
pub const MIN_LISTED_GAP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("need at least 3 points to fit an exponent, got {0}")]
    TooFewPoints(usize),
    #[error("sequence lengths must be distinct; {0} appears twice")]
    DuplicateN(f64),
    #[error("point ({0}, {1}) is not positive")]
    NonPositive(f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl Gap {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineReport {
    pub engine: EngineKind,
    pub op_count: usize,
    pub busy_ms: f64,
    pub idle_fraction: f64,
    /// Total idle time, including periods too short to be listed.
    pub idle_ms: f64,
    /// Share of this engine's busy time per op class; empty when idle.
    pub class_shares: BTreeMap<OpClass, f64>,
    pub gaps: Vec<Gap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: BTreeMap<String, String>,
    pub mode: ScheduleMode,
    pub makespan_ms: f64,
    pub engines: Vec<EngineReport>,
}

impl Report {
    pub fn engine(&self, engine: EngineKind) -> &EngineReport {
        &self.engines[engine.index()]
    }

    pub fn class_share(&self, engine: EngineKind, class: OpClass) -> f64 {
        self.engine(engine).class_shares.get(&class).copied().unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width summary for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "{k}: {v}");
        }
        let _ = writeln!(out, "mode: {}", self.mode);
        let _ = writeln!(out, "makespan_ms: {:.2}", self.makespan_ms);
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>12} {:>12} {:>6}  top classes",
            "engine", "ops", "busy_ms", "idle_ms", "idle"
        );
        for e in &self.engines {
            let mut shares: Vec<(&OpClass, &f64)> = e.class_shares.iter().collect();
            shares.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
            let top: Vec<String> = shares
                .iter()
                .take(3)
                .map(|(c, s)| format!("{}={:.1}%", c.name(), **s * 100.0))
                .collect();
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>12.2} {:>12.2} {:>5.1}%  {}",
                e.engine.to_string(),
                e.op_count,
                e.busy_ms,
                e.idle_ms,
                e.idle_fraction * 100.0,
                top.join(" ")
            );
        }
        out
    }
}

/// Maximal idle periods of `engine` inside the makespan window, in seconds.
/// Zero-work intervals do not interrupt an idle period.
pub fn idle_periods(timeline: &Timeline, engine: EngineKind) -> Vec<(f64, f64)> {
    if timeline.intervals.is_empty() {
        return Vec::new();
    }
    let t0 = timeline.start_time();
    let t1 = t0 + timeline.makespan();
    let mut busy: Vec<(f64, f64)> = timeline
        .lane(engine)
        .filter(|iv| iv.work > 0.0)
        .map(|iv| (iv.start, iv.end))
        .collect();
    busy.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut gaps = Vec::new();
    let mut cursor = t0;
    for (s, e) in busy {
        if s > cursor {
            gaps.push((cursor, s));
        }
        cursor = cursor.max(e);
    }
    if t1 > cursor {
        gaps.push((cursor, t1));
    }
    gaps
}

pub fn build_report(timeline: &Timeline, metadata: BTreeMap<String, String>) -> Report {
    let makespan = timeline.makespan();
    let engines = EngineKind::ALL
        .iter()
        .map(|&engine| {
            let busy = timeline.busy_time(engine);
            let mut by_class: BTreeMap<OpClass, f64> = BTreeMap::new();
            for iv in timeline.lane(engine) {
                if let (Some(class), true) = (iv.class, iv.work > 0.0) {
                    *by_class.entry(class).or_default() += iv.work;
                }
            }
            let class_total: f64 = by_class.values().sum();
            let class_shares = if class_total > 0.0 {
                by_class
                    .into_iter()
                    .map(|(c, t)| (c, t / class_total))
                    .collect()
            } else {
                BTreeMap::new()
            };
            let periods = idle_periods(timeline, engine);
            let idle: f64 = periods.iter().map(|(s, e)| e - s).sum();
            let gaps = periods
                .into_iter()
                .filter(|(s, e)| e - s >= MIN_LISTED_GAP)
                .map(|(s, e)| Gap {
                    start_ms: s * 1e3,
                    end_ms: e * 1e3,
                })
                .collect();
            EngineReport {
                engine,
                op_count: timeline.lane(engine).count(),
                busy_ms: busy * 1e3,
                idle_fraction: idle_fraction(timeline, engine),
                idle_ms: idle * 1e3,
                class_shares,
                gaps,
            }
        })
        .collect();
    Report {
        metadata,
        mode: timeline.mode,
        makespan_ms: makespan * 1e3,
        engines,
    }
}

/// Least-squares slope of `ln(seconds)` against `ln(n)`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<f64, ReportError> {
    if points.len() < 3 {
        return Err(ReportError::TooFewPoints(points.len()));
    }
    for (i, &(n, t)) in points.iter().enumerate() {
        if !(n > 0.0 && t > 0.0 && n.is_finite() && t.is_finite()) {
            return Err(ReportError::NonPositive(n, t));
        }
        if points[..i].iter().any(|p| p.0 == n) {
            return Err(ReportError::DuplicateN(n));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
