//! Fitting [`CostParams`] from MME/TPC batched-matmul measurements, and
//! tuning the TPC class multipliers against attention-variant speedups.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{
    op_cost, ClassMultipliers, CostError, CostParams, EfficiencyCurve, LaunchOverhead, RatioFit,
    TuningInfo,
};
use crate::graph::{Activation, DType, Graph};
use crate::mapping::{EngineKind, MappingTable};
use crate::scheduler::{simulate, ScheduleError, ScheduleMode};
use crate::workloads::{
    build_activation_bench, build_batched_matmul, build_transformer_layer, AttentionConfig,
    AttentionVariant, WorkloadError,
};

pub const TABLE_HEADER: &str = "size,t_mme_ms,f_mme,t_tpc_ms,f_tpc";

/// The bundled MME/TPC measurement table.
pub const TABLE2_CSV: &str = include_str!("../data/table2.csv");

/// Batch size of the calibration benchmark.
pub const CALIBRATION_BATCH: usize = 64;

/// Multiplier search box and resolution (eight steps per doubling).
pub const MULTIPLIER_MAX: f64 = 64.0;
pub const GRID_STEPS_PER_OCTAVE: u32 = 8;

/// Largest tolerated |log(achieved / target)| after tuning.
pub const MAX_LOG_ERROR: f64 = 0.5;

const MIN_OVERHEAD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: size {size} does not exceed the previous size {previous}")]
    NonMonotonicSizes { line: u64, size: u64, previous: u64 },
    #[error("need at least 2 rows to fit, got {0}")]
    InsufficientRows(usize),
    #[error("cannot reach targets: {0}")]
    TargetUnreachable(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub size: u64,
    pub t_mme_ms: f64,
    pub f_mme_tflops: f64,
    pub t_tpc_ms: f64,
    pub f_tpc_tflops: f64,
}

impl CalibrationRow {
    /// Measured MME speedup over the TPC.
    pub fn speedup(&self) -> f64 {
        self.t_tpc_ms / self.t_mme_ms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub rows: Vec<CalibrationRow>,
}

impl CalibrationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.size, r.t_mme_ms, r.f_mme_tflops, r.t_tpc_ms, r.f_tpc_tflops
            ));
        }
        out
    }
}

fn malformed(line: u64, reason: impl Into<String>) -> CalibrationError {
    CalibrationError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

/// Parses the `size,t_mme_ms,f_mme,t_tpc_ms,f_tpc` CSV format. Errors carry
/// 1-based line numbers.
pub fn parse_table(text: &str) -> Result<CalibrationTable, CalibrationError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(malformed(1, "empty file; expected header")),
        Some(Err(e)) => return Err(malformed(csv_line(&e).unwrap_or(1), e.to_string())),
        Some(Ok(h)) => h,
    };
    let header_line = header.position().map_or(1, |p| p.line());
    let fields: Vec<&str> = header.iter().collect();
    if fields.join(",") != TABLE_HEADER {
        return Err(malformed(
            header_line,
            format!("expected header `{TABLE_HEADER}`, found `{}`", fields.join(",")),
        ));
    }

    let mut rows: Vec<CalibrationRow> = Vec::new();
    for record in records {
        let record = record.map_err(|e| malformed(csv_line(&e).unwrap_or(0), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 5 {
            return Err(malformed(line, format!("expected 5 fields, found {}", record.len())));
        }
        let size: u64 = record[0]
            .parse()
            .map_err(|_| malformed(line, format!("size `{}` is not a positive integer", &record[0])))?;
        if size == 0 {
            return Err(malformed(line, "size must be positive"));
        }
        let mut vals = [0.0f64; 4];
        for (slot, name) in ["t_mme_ms", "f_mme", "t_tpc_ms", "f_tpc"].iter().enumerate() {
            let raw = &record[slot + 1];
            let v: f64 = raw
                .parse()
                .map_err(|_| malformed(line, format!("{name} `{raw}` is not a number")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(malformed(line, format!("{name} must be positive, got {raw}")));
            }
            vals[slot] = v;
        }
        if let Some(prev) = rows.last() {
            if size <= prev.size {
                return Err(CalibrationError::NonMonotonicSizes {
                    line,
                    size,
                    previous: prev.size,
                });
            }
        }
        rows.push(CalibrationRow {
            size,
            t_mme_ms: vals[0],
            f_mme_tflops: vals[1],
            t_tpc_ms: vals[2],
            f_tpc_tflops: vals[3],
        });
    }
    Ok(CalibrationTable { rows })
}

fn csv_line(e: &csv::Error) -> Option<u64> {
    e.position().map(|p| p.line())
}

pub fn bundled_table() -> CalibrationTable {
    parse_table(TABLE2_CSV).expect("bundled table parses")
}

/// Predicted duration of the square calibration matmul at `size` on
/// `engine`, without launch overhead.
fn bench_duration_without_overhead(
    params: &CostParams,
    size: u64,
    engine: EngineKind,
) -> Result<f64, CalibrationError> {
    let s = size as usize;
    let g = build_batched_matmul(CALIBRATION_BATCH, s, s, s, DType::Fp32)?;
    let cost = op_cost(&g.nodes()[0], &g, engine, params)?;
    Ok(cost.duration - cost.breakdown.overhead)
}

/// Predicted TPC-over-MME duration ratio of the calibration matmul.
pub fn predicted_speedup(params: &CostParams, size: u64) -> Result<f64, CalibrationError> {
    let s = size as usize;
    let g = build_batched_matmul(CALIBRATION_BATCH, s, s, s, DType::Fp32)?;
    let node = &g.nodes()[0];
    let tpc = op_cost(node, &g, EngineKind::TPC, params)?.duration;
    let mme = op_cost(node, &g, EngineKind::MME, params)?.duration;
    Ok(tpc / mme)
}

/// Peaks are the column maxima, efficiency knots are each row's throughput
/// over the peak. One launch overhead, shared by all engines, is solved so the
/// smallest size reproduces its measured speedup; everything else takes
/// module defaults.
pub fn fit_params(table: &CalibrationTable) -> Result<CostParams, CalibrationError> {
    if table.rows.len() < 2 {
        return Err(CalibrationError::InsufficientRows(table.rows.len()));
    }
    let mme_peak = table.rows.iter().map(|r| r.f_mme_tflops).fold(0.0, f64::max);
    let tpc_peak = table.rows.iter().map(|r| r.f_tpc_tflops).fold(0.0, f64::max);
    let mut params = CostParams::with_peaks(mme_peak, tpc_peak);
    params.mme_eff = EfficiencyCurve::new(
        table
            .rows
            .iter()
            .map(|r| (r.size, r.f_mme_tflops / mme_peak))
            .collect(),
    )?;
    params.tpc_eff = EfficiencyCurve::new(
        table
            .rows
            .iter()
            .map(|r| (r.size, r.f_tpc_tflops / tpc_peak))
            .collect(),
    )?;

    // ratio r = (d_t + o) / (d_m + o)  =>  o = (d_t - r d_m) / (r - 1)
    let first = &table.rows[0];
    let r = first.speedup();
    let d_m = bench_duration_without_overhead(&params, first.size, EngineKind::MME)?;
    let d_t = bench_duration_without_overhead(&params, first.size, EngineKind::TPC)?;
    let overhead = if (r - 1.0).abs() < 1e-12 {
        MIN_OVERHEAD
    } else {
        ((d_t - r * d_m) / (r - 1.0)).max(MIN_OVERHEAD)
    };
    params.launch_overhead = LaunchOverhead::uniform(overhead);
    params.check()?;
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTargets {
    pub softmax_over_linear: f64,
    pub softmax_over_favor: f64,
}

impl Default for AttentionTargets {
    fn default() -> Self {
        AttentionTargets {
            softmax_over_linear: 6.0,
            softmax_over_favor: 2.0,
        }
    }
}

/// The three graphs whose makespan ratios are tuned.
#[derive(Clone, Debug)]
pub struct TuningGraphs {
    pub label: String,
    pub softmax: Graph,
    pub linear: Graph,
    pub favor: Graph,
}

impl TuningGraphs {
    /// Transformer layers of all three variants at `cfg`.
    pub fn layers(cfg: &AttentionConfig) -> Result<Self, CalibrationError> {
        Ok(TuningGraphs {
            label: format!(
                "transformer_layer(seq_len={}, batch={}, heads={}, head_dim={}, dtype={})",
                cfg.seq_len, cfg.batch, cfg.heads, cfg.head_dim, cfg.dtype
            ),
            softmax: build_transformer_layer(cfg, AttentionVariant::Softmax)?,
            linear: build_transformer_layer(cfg, AttentionVariant::LinearElu)?,
            favor: build_transformer_layer(cfg, AttentionVariant::Favor)?,
        })
    }
}

/// Lookahead makespan of `graph` after transfer insertion.
pub fn lookahead_makespan(
    graph: &Graph,
    mapping: &MappingTable,
    params: &CostParams,
) -> Result<f64, CalibrationError> {
    Ok(simulate(graph, mapping, params, ScheduleMode::Lookahead)?.1.makespan())
}

/// The `2^(k/8)` grid over `[1, 64]`.
pub fn multiplier_grid() -> Vec<f64> {
    let steps = GRID_STEPS_PER_OCTAVE * MULTIPLIER_MAX.log2() as u32;
    (0..=steps)
        .map(|k| 2f64.powf(k as f64 / GRID_STEPS_PER_OCTAVE as f64))
        .collect()
}

fn ratios(
    graphs: &TuningGraphs,
    mapping: &MappingTable,
    params: &CostParams,
) -> Result<(f64, f64), CalibrationError> {
    let s = lookahead_makespan(&graphs.softmax, mapping, params)?;
    let l = lookahead_makespan(&graphs.linear, mapping, params)?;
    let f = lookahead_makespan(&graphs.favor, mapping, params)?;
    Ok((s / l, s / f))
}

/// Grid search over `exp_mul` and `reduction_mul` on the profiled
/// transformer-layer config.
pub fn tune_attention_multipliers(
    params: &CostParams,
    targets: AttentionTargets,
) -> Result<CostParams, CalibrationError> {
    let graphs = TuningGraphs::layers(&AttentionConfig::profiled(AttentionVariant::Softmax))?;
    tune_attention_multipliers_with(params, targets, &graphs, &MappingTable::default())
}

/// Minimizes the summed squared log-error of both makespan ratios. Ties go
/// to the smaller `exp_mul`, then the smaller `reduction_mul`.
pub fn tune_attention_multipliers_with(
    params: &CostParams,
    targets: AttentionTargets,
    graphs: &TuningGraphs,
    mapping: &MappingTable,
) -> Result<CostParams, CalibrationError> {
    params.check()?;
    let grid = multiplier_grid();
    let mut best: Option<(f64, f64, f64, (f64, f64))> = None;
    for &exp_mul in &grid {
        for &reduction_mul in &grid {
            let mut candidate = params.clone();
            candidate.class_multipliers = ClassMultipliers {
                exp_mul,
                reduction_mul,
                ..params.class_multipliers.clone()
            };
            let (rl, rf) = ratios(graphs, mapping, &candidate)?;
            let err = (rl / targets.softmax_over_linear).ln().powi(2)
                + (rf / targets.softmax_over_favor).ln().powi(2);
            if best.as_ref().is_none_or(|b| err < b.0) {
                best = Some((err, exp_mul, reduction_mul, (rl, rf)));
            }
        }
    }
    let (_, exp_mul, reduction_mul, (rl, rf)) = best.expect("grid is non-empty");
    let worst = (rl / targets.softmax_over_linear)
        .ln()
        .abs()
        .max((rf / targets.softmax_over_favor).ln().abs());
    if worst > MAX_LOG_ERROR {
        return Err(CalibrationError::TargetUnreachable(format!(
            "best grid point exp_mul={exp_mul}, reduction_mul={reduction_mul} gives \
             softmax/linear={rl:.3} (target {}), softmax/favor={rf:.3} (target {})",
            targets.softmax_over_linear, targets.softmax_over_favor
        )));
    }
    let mut tuned = params.clone();
    tuned.class_multipliers.exp_mul = exp_mul;
    tuned.class_multipliers.reduction_mul = reduction_mul;
    tuned.tuning = Some(TuningInfo {
        workload: graphs.label.clone(),
        softmax_over_linear: RatioFit {
            target: targets.softmax_over_linear,
            achieved: rl,
        },
        softmax_over_favor: RatioFit {
            target: targets.softmax_over_favor,
            achieved: rf,
        },
        glu_over_gelu: None,
    });
    Ok(tuned)
}

/// GLU-over-GELU layer makespan ratio from the activation benchmark
/// (32.6 ms against 29.7 ms).
pub const GLU_OVER_GELU_TARGET: f64 = 32.6 / 29.7;

/// Solves `glu_compile_penalty` so the GLU activation bench is slower than
/// the GELU one by `target` (lookahead, bisection on the penalty).
pub fn fit_glu_penalty(
    params: &CostParams,
    cfg: &AttentionConfig,
    target: f64,
) -> Result<CostParams, CalibrationError> {
    let mapping = MappingTable::default();
    let gelu = build_activation_bench(Activation::Gelu, cfg)?;
    let glu = build_activation_bench(Activation::Glu, cfg)?;
    let base = lookahead_makespan(&gelu, &mapping, params)?;
    let ratio_at = |penalty: f64| -> Result<f64, CalibrationError> {
        let mut p = params.clone();
        p.glu_compile_penalty = penalty;
        Ok(lookahead_makespan(&glu, &mapping, &p)? / base)
    };

    let mut lo = MIN_OVERHEAD;
    if ratio_at(lo)? > target {
        return Err(CalibrationError::TargetUnreachable(format!(
            "GLU layer is already {:.4}x the GELU layer without a penalty (target {target:.4})",
            ratio_at(lo)?
        )));
    }
    let mut hi = base.max(1e-3);
    while ratio_at(hi)? < target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut fitted = params.clone();
    fitted.glu_compile_penalty = hi;
    let achieved = ratio_at(hi)?;
    if let Some(t) = fitted.tuning.as_mut() {
        t.glu_over_gelu = Some(RatioFit { target, achieved });
    }
    Ok(fitted)
}

/// The full default pipeline: fit the bundled table, tune the attention
/// multipliers, then fit the GLU penalty, all at the profiled layer config.
pub fn calibrate_bundled() -> Result<CostParams, CalibrationError> {
    let fitted = fit_params(&bundled_table())?;
    let tuned = tune_attention_multipliers(&fitted, AttentionTargets::default())?;
    fit_glu_penalty(
        &tuned,
        &AttentionConfig::profiled(AttentionVariant::Softmax),
        GLU_OVER_GELU_TARGET,
    )
}
