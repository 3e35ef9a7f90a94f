//! Scenario files: a workload plus its parameters, scheduling mode and
//! output locations, as consumed by the command-line tool.
//!
//! ```json
//! {"workload": "transformer_layer", "attention": "favor", "seq_len": 2048,
//!  "batch": 128, "heads": 6, "head_dim": 64, "dtype": "fp32", "mode": "naive"}
//! ```
//!
//! Omitted shape fields fall back to the profiled configurations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cost::CostParams;
use crate::graph::{Activation, DType, Graph};
use crate::mapping::MappingTable;
use crate::report::{build_report, Report};
use crate::scheduler::{simulate, ScheduleError, ScheduleMode, Timeline, TimelineViolation};
use crate::workloads::{
    build_activation_bench, build_batched_matmul, build_favor_attention, build_linear_attention,
    build_lm_stack, build_softmax_attention, build_transformer_layer, AttentionConfig,
    AttentionVariant, LMConfig, LmModel, WorkloadError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("timeline failed validation: {0:?}")]
    Invariant(Vec<TimelineViolation>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    BatchedMatmul,
    SoftmaxAttention,
    LinearAttention,
    FavorAttention,
    TransformerLayer,
    ActivationBench,
    LmStack,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 7] = [
        WorkloadKind::BatchedMatmul,
        WorkloadKind::SoftmaxAttention,
        WorkloadKind::LinearAttention,
        WorkloadKind::FavorAttention,
        WorkloadKind::TransformerLayer,
        WorkloadKind::ActivationBench,
        WorkloadKind::LmStack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::BatchedMatmul => "batched_matmul",
            WorkloadKind::SoftmaxAttention => "softmax_attention",
            WorkloadKind::LinearAttention => "linear_attention",
            WorkloadKind::FavorAttention => "favor_attention",
            WorkloadKind::TransformerLayer => "transformer_layer",
            WorkloadKind::ActivationBench => "activation_bench",
            WorkloadKind::LmStack => "lm_stack",
        }
    }

    fn allowed_fields(self) -> &'static [&'static str] {
        const ATTN: &[&str] = &[
            "seq_len",
            "batch",
            "heads",
            "head_dim",
            "dtype",
            "favor_features",
            "include_projections",
        ];
        match self {
            WorkloadKind::BatchedMatmul => &["batch", "m", "k", "n", "dtype"],
            WorkloadKind::SoftmaxAttention
            | WorkloadKind::LinearAttention
            | WorkloadKind::FavorAttention => ATTN,
            WorkloadKind::TransformerLayer => &[
                "seq_len",
                "batch",
                "heads",
                "head_dim",
                "dtype",
                "favor_features",
                "attention",
            ],
            WorkloadKind::ActivationBench => &[
                "seq_len",
                "batch",
                "heads",
                "head_dim",
                "dtype",
                "attention",
                "activation",
            ],
            WorkloadKind::LmStack => &[
                "model",
                "layers",
                "seq_len",
                "batch",
                "heads",
                "head_dim",
                "ffn_mult",
                "activation",
                "vocab",
                "dtype",
            ],
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Comma-separated list of accepted workload names.
pub fn workload_names() -> String {
    WorkloadKind::ALL
        .iter()
        .map(|w| w.name())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub workload: Option<WorkloadKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<DType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favor_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_projections: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<LmModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_mult: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ScheduleMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_report: Option<PathBuf>,
    /// Only used by randomized test-graph generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn config_err(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.check_fields()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("scenario serializes")
    }

    pub fn workload(&self) -> Result<WorkloadKind, ScenarioError> {
        self.workload
            .ok_or_else(|| config_err(format!("missing `workload` (one of: {})", workload_names())))
    }

    /// Returns a copy with `key` set to `value`. The value is read as JSON
    /// when it parses (numbers, booleans) and as a string otherwise.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ScenarioError> {
        let mut doc = self.to_value();
        let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
        doc.as_object_mut()
            .expect("scenario is an object")
            .insert(key.to_string(), parsed);
        let cfg: ScenarioConfig = serde_json::from_value(doc).map_err(|e| config_err(format!("{key}={value}: {e}")))?;
        cfg.check_fields()?;
        Ok(cfg)
    }

    /// Rejects shape fields that the chosen workload does not use.
    pub fn check_fields(&self) -> Result<(), ScenarioError> {
        let Some(kind) = self.workload else {
            return Ok(());
        };
        let allowed = kind.allowed_fields();
        let doc = self.to_value();
        const GENERAL: &[&str] = &[
            "workload",
            "name",
            "mode",
            "params",
            "mapping",
            "out_trace",
            "out_report",
            "seed",
        ];
        for key in doc.as_object().expect("object").keys() {
            if !GENERAL.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
                return Err(config_err(format!(
                    "`{key}` does not apply to workload {kind} (accepted: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Short label for tables: the explicit name, or the workload.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let w = self.workload.map_or("?", |w| w.name());
        match (self.attention, self.activation) {
            (Some(a), _) if self.workload == Some(WorkloadKind::TransformerLayer) => format!("{w}:{a}"),
            (_, Some(a)) if self.workload == Some(WorkloadKind::ActivationBench) => format!("{w}:{}", a.name()),
            _ => w.to_string(),
        }
    }

    pub fn attention_config(&self, variant: AttentionVariant) -> AttentionConfig {
        let base = AttentionConfig::profiled(variant);
        AttentionConfig {
            seq_len: self.seq_len.unwrap_or(base.seq_len),
            batch: self.batch.unwrap_or(base.batch),
            heads: self.heads.unwrap_or(base.heads),
            head_dim: self.head_dim.unwrap_or(base.head_dim),
            dtype: self.dtype.unwrap_or(base.dtype),
            favor_features: match variant {
                AttentionVariant::Favor => self.favor_features.or(base.favor_features),
                _ => self.favor_features,
            },
            include_projections: self.include_projections.unwrap_or(false),
            variant,
        }
    }

    pub fn lm_config(&self) -> LMConfig {
        let model = self.model.unwrap_or(LmModel::GptStyle);
        let base = LMConfig::profiled(model);
        LMConfig {
            model,
            layers: self.layers.unwrap_or(base.layers),
            seq_len: self.seq_len.unwrap_or(base.seq_len),
            batch: self.batch.unwrap_or(base.batch),
            heads: self.heads.unwrap_or(base.heads),
            head_dim: self.head_dim.unwrap_or(base.head_dim),
            ffn_mult: self.ffn_mult.unwrap_or(base.ffn_mult),
            activation: self.activation.unwrap_or(base.activation),
            vocab: self.vocab.unwrap_or(base.vocab),
            dtype: self.dtype.unwrap_or(base.dtype),
        }
    }

    /// Builds the forward graph and the metadata that goes into reports.
    pub fn build(&self) -> Result<(Graph, BTreeMap<String, String>), ScenarioError> {
        let kind = self.workload()?;
        self.check_fields()?;
        let mut meta = BTreeMap::new();
        meta.insert("workload".to_string(), kind.name().to_string());
        meta.insert("graph".to_string(), "forward-graph".to_string());
        if let Some(n) = &self.name {
            meta.insert("name".to_string(), n.clone());
        }
        let attn_meta = |cfg: &AttentionConfig, meta: &mut BTreeMap<String, String>| {
            meta.insert(
                "config".to_string(),
                format!(
                    "seq_len={} batch={} heads={} head_dim={} dtype={}",
                    cfg.seq_len, cfg.batch, cfg.heads, cfg.head_dim, cfg.dtype
                ),
            );
            meta.insert("attention".to_string(), cfg.variant.to_string());
        };
        let graph = match kind {
            WorkloadKind::BatchedMatmul => {
                let (b, m, k, n) = (
                    self.batch.unwrap_or(64),
                    self.m.unwrap_or(1024),
                    self.k.unwrap_or(1024),
                    self.n.unwrap_or(1024),
                );
                meta.insert("config".to_string(), format!("batch={b} m={m} k={k} n={n}"));
                build_batched_matmul(b, m, k, n, self.dtype.unwrap_or(DType::Fp32))?
            }
            WorkloadKind::SoftmaxAttention => {
                let cfg = self.attention_config(AttentionVariant::Softmax);
                attn_meta(&cfg, &mut meta);
                build_softmax_attention(&cfg)?
            }
            WorkloadKind::LinearAttention => {
                let cfg = self.attention_config(AttentionVariant::LinearElu);
                attn_meta(&cfg, &mut meta);
                build_linear_attention(&cfg)?
            }
            WorkloadKind::FavorAttention => {
                let cfg = self.attention_config(AttentionVariant::Favor);
                attn_meta(&cfg, &mut meta);
                build_favor_attention(&cfg)?
            }
            WorkloadKind::TransformerLayer => {
                let variant = self.attention.unwrap_or_default();
                let cfg = self.attention_config(variant);
                attn_meta(&cfg, &mut meta);
                build_transformer_layer(&cfg, variant)?
            }
            WorkloadKind::ActivationBench => {
                let activation = self.activation.unwrap_or(Activation::Gelu);
                let cfg = self.attention_config(self.attention.unwrap_or_default());
                attn_meta(&cfg, &mut meta);
                meta.insert("activation".to_string(), activation.name().to_string());
                build_activation_bench(activation, &cfg)?
            }
            WorkloadKind::LmStack => {
                let cfg = self.lm_config();
                meta.insert("model".to_string(), cfg.model.name().to_string());
                meta.insert(
                    "config".to_string(),
                    format!(
                        "layers={} seq_len={} batch={} heads={} head_dim={} vocab={} dtype={}",
                        cfg.layers, cfg.seq_len, cfg.batch, cfg.heads, cfg.head_dim, cfg.vocab, cfg.dtype
                    ),
                );
                build_lm_stack(&cfg)?
            }
        };
        Ok((graph, meta))
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    /// The transfer-augmented graph that was scheduled.
    pub graph: Graph,
    pub timeline: Timeline,
    pub report: Report,
}

/// Build, insert transfers, schedule, validate and report.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    params: &CostParams,
    mapping: &MappingTable,
    mode: ScheduleMode,
) -> Result<ScenarioRun, ScenarioError> {
    let (graph, mut meta) = cfg.build()?;
    let (graph, timeline) = simulate(&graph, mapping, params, mode)?;
    timeline
        .validate_against(&graph)
        .map_err(ScenarioError::Invariant)?;
    meta.insert("nodes".to_string(), graph.len().to_string());
    let report = build_report(&timeline, meta);
    Ok(ScenarioRun {
        graph,
        timeline,
        report,
    })
}
