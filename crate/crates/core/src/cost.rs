//! Analytic work counts and roofline-style duration prediction.
//!
//! `duration = max(compute_time, memory_time) + overhead`, where compute time
//! divides multiplier-weighted flops by the engine's calibrated throughput at
//! the op's characteristic size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Activation, Graph, GraphError, OpKind, OpNode};
use crate::mapping::EngineKind;

pub const DEFAULT_DMA_BANDWIDTH: f64 = 1.0e12;
pub const DEFAULT_MEM_BANDWIDTH: f64 = 1.0e12;
/// Used until a launch overhead is fitted from a calibration table.
pub const DEFAULT_LAUNCH_OVERHEAD: f64 = 2.0e-6;
/// Per-GLU-node compile stall used before activation tuning; the measured
/// 32.6 ms vs 29.7 ms difference.
pub const DEFAULT_GLU_COMPILE_PENALTY: f64 = 2.9e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("{kind} cannot run on {engine}")]
    UnsupportedPlacement { kind: String, engine: EngineKind },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
}

/// Fraction of peak throughput as a function of an op's characteristic
/// size. Piecewise-linear between knots, clamped outside them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct EfficiencyCurve {
    knots: Vec<(u64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    knots: Vec<(u64, f64)>,
}

impl TryFrom<RawCurve> for EfficiencyCurve {
    type Error = CostError;

    fn try_from(raw: RawCurve) -> Result<Self, Self::Error> {
        EfficiencyCurve::new(raw.knots)
    }
}

impl EfficiencyCurve {
    pub fn new(knots: Vec<(u64, f64)>) -> Result<Self, CostError> {
        if knots.is_empty() {
            return Err(CostError::InvalidParams("efficiency curve has no knots".into()));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CostError::InvalidParams(format!(
                    "knot sizes must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(size, eff) in &knots {
            if size == 0 || !(eff > 0.0 && eff <= 1.0) {
                return Err(CostError::InvalidParams(format!(
                    "bad knot ({size}, {eff}); need size >= 1 and efficiency in (0, 1]"
                )));
            }
        }
        Ok(EfficiencyCurve { knots })
    }

    /// A curve that is 1.0 everywhere.
    pub fn flat() -> Self {
        EfficiencyCurve {
            knots: vec![(1, 1.0)],
        }
    }

    pub fn knots(&self) -> &[(u64, f64)] {
        &self.knots
    }

    pub fn at(&self, size: u64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if size <= first.0 {
            return first.1;
        }
        if size >= last.0 {
            return last.1;
        }
        let hi = self.knots.partition_point(|k| k.0 < size);
        let (s0, e0) = self.knots[hi - 1];
        let (s1, e1) = self.knots[hi];
        let t = (size - s0) as f64 / (s1 - s0) as f64;
        e0 + t * (e1 - e0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMultipliers {
    pub exp_mul: f64,
    pub reduction_mul: f64,
    pub div_mul: f64,
    pub gelu_mul: f64,
}

impl Default for ClassMultipliers {
    fn default() -> Self {
        ClassMultipliers {
            exp_mul: 1.0,
            reduction_mul: 1.0,
            div_mul: 1.0,
            gelu_mul: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineBandwidth {
    #[serde(rename = "MME")]
    pub mme: f64,
    #[serde(rename = "TPC")]
    pub tpc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchOverhead {
    #[serde(rename = "MME")]
    pub mme: f64,
    #[serde(rename = "TPC")]
    pub tpc: f64,
    #[serde(rename = "DMA")]
    pub dma: f64,
}

impl LaunchOverhead {
    pub fn uniform(seconds: f64) -> Self {
        LaunchOverhead {
            mme: seconds,
            tpc: seconds,
            dma: seconds,
        }
    }

    pub fn get(&self, engine: EngineKind) -> f64 {
        match engine {
            EngineKind::MME => self.mme,
            EngineKind::TPC => self.tpc,
            EngineKind::DMA => self.dma,
        }
    }
}

/// One achieved-vs-target ratio recorded by tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioFit {
    pub target: f64,
    pub achieved: f64,
}

/// Provenance of tuned multipliers: the workload they were fitted on and how
/// close the fit came.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningInfo {
    pub workload: String,
    pub softmax_over_linear: RatioFit,
    pub softmax_over_favor: RatioFit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glu_over_gelu: Option<RatioFit>,
}

/// Calibrated engine model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct CostParams {
    pub mme_peak_tflops: f64,
    /// Aggregate over the whole vector-core cluster.
    pub tpc_peak_tflops: f64,
    pub mme_eff: EfficiencyCurve,
    pub tpc_eff: EfficiencyCurve,
    pub class_multipliers: ClassMultipliers,
    pub dma_bandwidth: f64,
    pub mem_bandwidth: EngineBandwidth,
    pub launch_overhead: LaunchOverhead,
    pub glu_compile_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningInfo>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    mme_peak_tflops: f64,
    tpc_peak_tflops: f64,
    mme_eff: EfficiencyCurve,
    tpc_eff: EfficiencyCurve,
    class_multipliers: ClassMultipliers,
    dma_bandwidth: f64,
    mem_bandwidth: EngineBandwidth,
    launch_overhead: LaunchOverhead,
    glu_compile_penalty: f64,
    #[serde(default)]
    tuning: Option<TuningInfo>,
}

impl TryFrom<RawParams> for CostParams {
    type Error = CostError;

    fn try_from(r: RawParams) -> Result<Self, Self::Error> {
        let p = CostParams {
            mme_peak_tflops: r.mme_peak_tflops,
            tpc_peak_tflops: r.tpc_peak_tflops,
            mme_eff: r.mme_eff,
            tpc_eff: r.tpc_eff,
            class_multipliers: r.class_multipliers,
            dma_bandwidth: r.dma_bandwidth,
            mem_bandwidth: r.mem_bandwidth,
            launch_overhead: r.launch_overhead,
            glu_compile_penalty: r.glu_compile_penalty,
            tuning: r.tuning,
        };
        p.check()?;
        Ok(p)
    }
}

const DEFAULT_PARAMS_JSON: &str = include_str!("../data/default_params.json");

/// Parameters fitted from the bundled MME/TPC matmul measurements, with attention
/// multipliers and the GLU penalty tuned.
pub fn default_params() -> CostParams {
    CostParams::from_json(DEFAULT_PARAMS_JSON).expect("bundled params are valid")
}

impl Default for CostParams {
    fn default() -> Self {
        default_params()
    }
}

impl CostParams {
    /// Untuned parameters around the given peaks: flat efficiency, unit
    /// multipliers and module-default bandwidths and overheads.
    pub fn with_peaks(mme_peak_tflops: f64, tpc_peak_tflops: f64) -> Self {
        CostParams {
            mme_peak_tflops,
            tpc_peak_tflops,
            mme_eff: EfficiencyCurve::flat(),
            tpc_eff: EfficiencyCurve::flat(),
            class_multipliers: ClassMultipliers::default(),
            dma_bandwidth: DEFAULT_DMA_BANDWIDTH,
            mem_bandwidth: EngineBandwidth {
                mme: DEFAULT_MEM_BANDWIDTH,
                tpc: DEFAULT_MEM_BANDWIDTH,
            },
            launch_overhead: LaunchOverhead::uniform(DEFAULT_LAUNCH_OVERHEAD),
            glu_compile_penalty: DEFAULT_GLU_COMPILE_PENALTY,
            tuning: None,
        }
    }

    pub fn check(&self) -> Result<(), CostError> {
        let positive = [
            ("mme_peak_tflops", self.mme_peak_tflops),
            ("tpc_peak_tflops", self.tpc_peak_tflops),
            ("dma_bandwidth", self.dma_bandwidth),
            ("mem_bandwidth.MME", self.mem_bandwidth.mme),
            ("mem_bandwidth.TPC", self.mem_bandwidth.tpc),
            ("launch_overhead.MME", self.launch_overhead.mme),
            ("launch_overhead.TPC", self.launch_overhead.tpc),
            ("launch_overhead.DMA", self.launch_overhead.dma),
            ("glu_compile_penalty", self.glu_compile_penalty),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        let m = &self.class_multipliers;
        for (name, v) in [
            ("exp_mul", m.exp_mul),
            ("reduction_mul", m.reduction_mul),
            ("div_mul", m.div_mul),
            ("gelu_mul", m.gelu_mul),
        ] {
            if !(v.is_finite() && v >= 1.0) {
                return Err(CostError::InvalidParams(format!("{name} must be >= 1, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, CostError> {
        serde_json::from_str(text).map_err(|e| CostError::InvalidParams(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    /// Peak throughput in flop/s.
    pub fn peak(&self, engine: EngineKind) -> f64 {
        match engine {
            EngineKind::MME => self.mme_peak_tflops * 1e12,
            EngineKind::TPC => self.tpc_peak_tflops * 1e12,
            EngineKind::DMA => 0.0,
        }
    }

    pub fn efficiency(&self, engine: EngineKind, size: u64) -> f64 {
        match engine {
            EngineKind::MME => self.mme_eff.at(size),
            EngineKind::TPC => self.tpc_eff.at(size),
            EngineKind::DMA => 1.0,
        }
    }

    pub fn bandwidth(&self, engine: EngineKind) -> f64 {
        match engine {
            EngineKind::MME => self.mem_bandwidth.mme,
            EngineKind::TPC => self.mem_bandwidth.tpc,
            EngineKind::DMA => self.dma_bandwidth,
        }
    }
}

/// Report-level grouping of op kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpClass {
    Matmul,
    Softmax,
    Exp,
    Elementwise,
    Reduction,
    Activation,
    Transfer,
}

impl OpClass {
    pub const ALL: [OpClass; 7] = [
        OpClass::Matmul,
        OpClass::Softmax,
        OpClass::Exp,
        OpClass::Elementwise,
        OpClass::Reduction,
        OpClass::Activation,
        OpClass::Transfer,
    ];

    pub fn of(kind: &OpKind) -> OpClass {
        match kind {
            OpKind::MatMul | OpKind::BatchMatMul => OpClass::Matmul,
            OpKind::Softmax => OpClass::Softmax,
            OpKind::Exp => OpClass::Exp,
            OpKind::Reduction { .. } => OpClass::Reduction,
            OpKind::Activation(_) => OpClass::Activation,
            OpKind::MemCopy => OpClass::Transfer,
            _ => OpClass::Elementwise,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Matmul => "matmul",
            OpClass::Softmax => "softmax",
            OpClass::Exp => "exp",
            OpClass::Elementwise => "elementwise",
            OpClass::Reduction => "reduction",
            OpClass::Activation => "activation",
            OpClass::Transfer => "transfer",
        }
    }
}

/// Scalar-op categories that carry their own cost multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlopKind {
    Plain,
    Exp,
    Reduce,
    Div,
    Gelu,
}

impl FlopKind {
    fn multiplier(self, m: &ClassMultipliers) -> f64 {
        match self {
            FlopKind::Plain => 1.0,
            FlopKind::Exp => m.exp_mul,
            FlopKind::Reduce => m.reduction_mul,
            FlopKind::Div => m.div_mul,
            FlopKind::Gelu => m.gelu_mul,
        }
    }
}

/// Scalar-op counts per activation element, split by category.
fn activation_terms(act: Activation) -> &'static [(FlopKind, u64)] {
    match act {
        Activation::Relu => &[(FlopKind::Plain, 1)],
        Activation::LeakyRelu => &[(FlopKind::Plain, 2)],
        // exp(x) - 1 on the negative side, then + 1
        Activation::EluPlusOne => &[(FlopKind::Exp, 1), (FlopKind::Plain, 2)],
        // 1 / (1 + exp(-x))
        Activation::Sigmoid => &[(FlopKind::Exp, 1), (FlopKind::Plain, 2), (FlopKind::Div, 1)],
        Activation::Gelu => &[(FlopKind::Gelu, 8)],
        // sigmoid of the gate half plus one multiply, per output element
        Activation::Glu => &[(FlopKind::Exp, 1), (FlopKind::Plain, 3), (FlopKind::Div, 1)],
    }
}

/// Flop counts of `node`, split by multiplier category.
pub fn flop_terms(node: &OpNode, graph: &Graph) -> Result<Vec<(FlopKind, u64)>, CostError> {
    let ins = graph.input_specs(node)?;
    let out = graph.output_spec(node)?;
    let x = ins.first().copied().unwrap_or(out);
    let elems = x.element_count();
    let terms = match &node.kind {
        OpKind::MatMul | OpKind::BatchMatMul => {
            let (m, k, n) = matmul_dims(node, graph)?;
            let batch = out.element_count() / (m * n);
            vec![(FlopKind::Plain, 2 * batch * m * k * n)]
        }
        OpKind::Softmax => {
            let len = x.innermost() as u64;
            let rows = elems / len;
            vec![
                (FlopKind::Exp, rows * len),
                (FlopKind::Reduce, rows * (len - 1)),
                (FlopKind::Div, rows * len),
            ]
        }
        OpKind::Reduction { axis } => {
            let len = x.shape().get(*axis).copied().unwrap_or(1) as u64;
            vec![(FlopKind::Reduce, (elems / len) * (len - 1))]
        }
        OpKind::Exp => vec![(FlopKind::Exp, elems)],
        OpKind::ElemwiseDiv => vec![(FlopKind::Div, elems)],
        OpKind::Log
        | OpKind::Sqrt
        | OpKind::Square
        | OpKind::ElemwiseAdd
        | OpKind::ElemwiseSub
        | OpKind::ElemwiseMul
        | OpKind::ScalarMul
        | OpKind::ScalarAdd => vec![(FlopKind::Plain, elems)],
        OpKind::Activation(act) => {
            let per = if *act == Activation::Glu {
                out.element_count()
            } else {
                elems
            };
            activation_terms(*act)
                .iter()
                .map(|&(k, c)| (k, c * per))
                .collect()
        }
        OpKind::Transpose | OpKind::Reshape { .. } | OpKind::MemCopy | OpKind::OnesLike => {
            Vec::new()
        }
    };
    Ok(terms)
}

/// `(M, K, N)` of a (batched) matrix product.
fn matmul_dims(node: &OpNode, graph: &Graph) -> Result<(u64, u64, u64), CostError> {
    let ins = graph.input_specs(node)?;
    let (a, b) = match ins.as_slice() {
        [a, b] if a.rank() >= 2 && b.rank() >= 2 => (a.shape(), b.shape()),
        _ => {
            return Err(CostError::Graph(GraphError::ShapeMismatch {
                kind: node.kind.to_string(),
                detail: "matmul needs two operands of rank >= 2".into(),
            }))
        }
    };
    let m = a[a.len() - 2] as u64;
    let k = a[a.len() - 1] as u64;
    let n = b[b.len() - 1] as u64;
    Ok((m, k, n))
}

/// Total scalar flops of `node`.
pub fn op_flops(node: &OpNode, graph: &Graph) -> Result<u64, CostError> {
    Ok(flop_terms(node, graph)?.iter().map(|t| t.1).sum())
}

fn weighted_flops(terms: &[(FlopKind, u64)], m: &ClassMultipliers) -> f64 {
    terms
        .iter()
        .map(|&(k, c)| c as f64 * k.multiplier(m))
        .sum()
}

/// Cost-weighted flops divided by raw flops; 1.0 for ops without flops.
pub fn class_multiplier(node: &OpNode, graph: &Graph, params: &CostParams) -> Result<f64, CostError> {
    let terms = flop_terms(node, graph)?;
    let raw: u64 = terms.iter().map(|t| t.1).sum();
    if raw == 0 {
        return Ok(1.0);
    }
    Ok(weighted_flops(&terms, &params.class_multipliers) / raw as f64)
}

/// Bytes read plus bytes written. Views move nothing.
pub fn op_bytes(node: &OpNode, graph: &Graph) -> Result<u64, CostError> {
    if matches!(node.kind, OpKind::Reshape { .. }) {
        return Ok(0);
    }
    let ins: u64 = graph.input_specs(node)?.iter().map(|s| s.byte_size()).sum();
    Ok(ins + graph.output_spec(node)?.byte_size())
}

/// Index into the efficiency curves: `min(M, K, N)` for matrix products,
/// the innermost input dimension otherwise.
pub fn characteristic_size(node: &OpNode, graph: &Graph) -> Result<u64, CostError> {
    if node.kind.is_matmul() {
        let (m, k, n) = matmul_dims(node, graph)?;
        return Ok(m.min(k).min(n));
    }
    let ins = graph.input_specs(node)?;
    let spec = match ins.first() {
        Some(s) => *s,
        None => graph.output_spec(node)?,
    };
    Ok(spec.innermost() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub compute_time: f64,
    pub memory_time: f64,
    pub overhead: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    pub flops: u64,
    pub bytes_moved: u64,
    /// Seconds.
    pub duration: f64,
    pub engine: EngineKind,
    pub breakdown: CostBreakdown,
}

fn allowed_on_dma(kind: &OpKind) -> bool {
    matches!(
        kind,
        OpKind::MemCopy | OpKind::Transpose | OpKind::Reshape { .. } | OpKind::OnesLike
    )
}

/// Predicted cost of running `node` on `engine`.
pub fn op_cost(
    node: &OpNode,
    graph: &Graph,
    engine: EngineKind,
    params: &CostParams,
) -> Result<OpCost, CostError> {
    if engine == EngineKind::DMA && !allowed_on_dma(&node.kind) {
        return Err(CostError::UnsupportedPlacement {
            kind: node.kind.to_string(),
            engine,
        });
    }
    let terms = flop_terms(node, graph)?;
    let flops: u64 = terms.iter().map(|t| t.1).sum();
    let bytes = op_bytes(node, graph)?;

    // Views are free: no kernel is launched.
    if matches!(node.kind, OpKind::Reshape { .. }) {
        return Ok(OpCost {
            flops,
            bytes_moved: bytes,
            duration: 0.0,
            engine,
            breakdown: CostBreakdown {
                compute_time: 0.0,
                memory_time: 0.0,
                overhead: 0.0,
            },
        });
    }

    let compute_time = if engine == EngineKind::DMA || flops == 0 {
        0.0
    } else {
        let size = characteristic_size(node, graph)?;
        weighted_flops(&terms, &params.class_multipliers)
            / (params.peak(engine) * params.efficiency(engine, size))
    };
    let memory_time = bytes as f64 / params.bandwidth(engine);
    let mut overhead = params.launch_overhead.get(engine);
    if node.kind == OpKind::Activation(Activation::Glu) {
        overhead += params.glu_compile_penalty;
    }
    Ok(OpCost {
        flops,
        bytes_moved: bytes,
        duration: compute_time.max(memory_time) + overhead,
        engine,
        breakdown: CostBreakdown {
            compute_time,
            memory_time,
            overhead,
        },
    })
}
