//! Graph builders for the profiled experiments: batched matmul benches,
//! three attention variants, transformer layers and small language-model
//! stacks.
//!
//! Attention tensors are laid out as `[B*h, N, D]`; projections work on the
//! flattened activations `[B*N, h*D]` and a free reshape moves between the
//! two.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{attrs, Activation, AttrValue, Attrs, DType, Graph, GraphError, OpKind, TensorId};

pub const DEFAULT_FAVOR_FEATURES: usize = 256;
pub const DEFAULT_FFN_MULT: usize = 4;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    #[default]
    Softmax,
    LinearElu,
    Favor,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 3] = [
        AttentionVariant::Softmax,
        AttentionVariant::LinearElu,
        AttentionVariant::Favor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Softmax => "softmax",
            AttentionVariant::LinearElu => "linear_elu",
            AttentionVariant::Favor => "favor",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub seq_len: usize,
    pub batch: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub dtype: DType,
    pub variant: AttentionVariant,
    /// Random-feature count; set exactly when `variant` is FAVOR.
    pub favor_features: Option<usize>,
    pub include_projections: bool,
}

impl AttentionConfig {
    pub fn new(
        variant: AttentionVariant,
        seq_len: usize,
        batch: usize,
        heads: usize,
        head_dim: usize,
    ) -> Self {
        AttentionConfig {
            seq_len,
            batch,
            heads,
            head_dim,
            dtype: DType::Fp32,
            variant,
            favor_features: (variant == AttentionVariant::Favor).then_some(DEFAULT_FAVOR_FEATURES),
            include_projections: false,
        }
    }

    /// The single-layer profiling setup: N=2048, B=128, h=6, D=64.
    pub fn profiled(variant: AttentionVariant) -> Self {
        AttentionConfig::new(variant, 2048, 128, 6, 64)
    }

    /// Same shape, different variant; the feature count follows the variant.
    pub fn with_variant(&self, variant: AttentionVariant) -> Self {
        let favor_features = match variant {
            AttentionVariant::Favor => Some(self.favor_features.unwrap_or(DEFAULT_FAVOR_FEATURES)),
            _ => None,
        };
        AttentionConfig {
            variant,
            favor_features,
            ..self.clone()
        }
    }

    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        positive(&[
            ("seq_len", self.seq_len),
            ("batch", self.batch),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
        ])?;
        match (self.variant, self.favor_features) {
            (AttentionVariant::Favor, Some(0)) => Err(invalid("favor_features must be positive")),
            (AttentionVariant::Favor, None) => Err(invalid("favor variant needs favor_features")),
            (AttentionVariant::Favor, Some(_)) | (_, None) => Ok(()),
            (v, Some(_)) => Err(invalid(&format!("favor_features given for {v} attention"))),
        }
    }

    fn expect(&self, variant: AttentionVariant) -> Result<(), WorkloadError> {
        if self.variant != variant {
            return Err(invalid(&format!(
                "expected variant {variant}, config has {}",
                self.variant
            )));
        }
        self.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmModel {
    BertStyle,
    GptStyle,
}

impl LmModel {
    pub fn name(self) -> &'static str {
        match self {
            LmModel::BertStyle => "bert_style",
            LmModel::GptStyle => "gpt_style",
        }
    }

    /// Tokenizer vocabulary of the reference model.
    pub fn default_vocab(self) -> usize {
        match self {
            LmModel::BertStyle => 30522,
            LmModel::GptStyle => 50257,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LMConfig {
    pub model: LmModel,
    pub layers: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_mult: usize,
    pub activation: Activation,
    pub vocab: usize,
    pub dtype: DType,
}

impl LMConfig {
    pub fn new(
        model: LmModel,
        layers: usize,
        seq_len: usize,
        batch: usize,
        heads: usize,
        head_dim: usize,
    ) -> Self {
        LMConfig {
            model,
            layers,
            seq_len,
            batch,
            heads,
            head_dim,
            ffn_mult: DEFAULT_FFN_MULT,
            activation: Activation::Gelu,
            vocab: model.default_vocab(),
            dtype: DType::Fp32,
        }
    }

    /// End-to-end profiling setup: N=2048, B=8, 2 layers, 8 heads, D=64.
    pub fn profiled(model: LmModel) -> Self {
        LMConfig::new(model, 2, 2048, 8, 8, 64)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        positive(&[
            ("layers", self.layers),
            ("seq_len", self.seq_len),
            ("batch", self.batch),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("ffn_mult", self.ffn_mult),
            ("vocab", self.vocab),
        ])
    }
}

/// FFN shape inside a transformer layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnSpec {
    pub mult: usize,
    pub activation: Activation,
}

impl Default for FfnSpec {
    fn default() -> Self {
        FfnSpec {
            mult: DEFAULT_FFN_MULT,
            activation: Activation::Gelu,
        }
    }
}

fn invalid(msg: &str) -> WorkloadError {
    WorkloadError::InvalidConfig(msg.to_string())
}

fn positive(fields: &[(&str, usize)]) -> Result<(), WorkloadError> {
    for (name, v) in fields {
        if *v == 0 {
            return Err(invalid(&format!("{name} must be positive")));
        }
    }
    Ok(())
}

struct Builder {
    g: Graph,
    dtype: DType,
}

impl Builder {
    fn new(dtype: DType) -> Self {
        Builder {
            g: Graph::new(),
            dtype,
        }
    }

    fn input(&mut self, shape: &[usize]) -> Result<TensorId, WorkloadError> {
        Ok(self.g.add_tensor(shape, self.dtype)?)
    }

    fn op(&mut self, kind: OpKind, inputs: &[TensorId], name: &str) -> Result<TensorId, WorkloadError> {
        self.op_with(kind, inputs, name, Attrs::new())
    }

    fn op_with(
        &mut self,
        kind: OpKind,
        inputs: &[TensorId],
        name: &str,
        mut extra: Attrs,
    ) -> Result<TensorId, WorkloadError> {
        extra.insert("name".into(), AttrValue::from(name));
        Ok(self.g.op(kind, inputs, extra)?)
    }

    fn scalar(&mut self, kind: OpKind, input: TensorId, value: f64, name: &str) -> Result<TensorId, WorkloadError> {
        self.op_with(kind, &[input], name, attrs([("scalar", value.into())]))
    }

    fn shape(&self, t: TensorId) -> Vec<usize> {
        self.g.tensor(t).expect("builder tensors exist").shape().to_vec()
    }
}

/// One `BatchMatMul` of `[b, m, k]` by `[b, k, n]`.
pub fn build_batched_matmul(
    b: usize,
    m: usize,
    k: usize,
    n: usize,
    dtype: DType,
) -> Result<Graph, WorkloadError> {
    positive(&[("batch", b), ("m", m), ("k", k), ("n", n)])?;
    let mut bl = Builder::new(dtype);
    let lhs = bl.input(&[b, m, k])?;
    let rhs = bl.input(&[b, k, n])?;
    bl.op(OpKind::BatchMatMul, &[lhs, rhs], "bmm")?;
    Ok(bl.g)
}

/// Q, K and V as `[B*h, N, D]`, either as graph inputs or projected from a
/// shared activation `x`.
fn qkv(bl: &mut Builder, cfg: &AttentionConfig, x: Option<TensorId>) -> Result<[TensorId; 3], WorkloadError> {
    let bh = cfg.batch * cfg.heads;
    let heads_shape = [bh, cfg.seq_len, cfg.head_dim];
    let Some(x) = x else {
        return Ok([
            bl.input(&heads_shape)?,
            bl.input(&heads_shape)?,
            bl.input(&heads_shape)?,
        ]);
    };
    let e = cfg.hidden();
    let mut out = [x; 3];
    for (slot, name) in ["q", "k", "v"].iter().enumerate() {
        let w = bl.input(&[e, e])?;
        let flat = bl.op(OpKind::MatMul, &[x, w], &format!("{name}_proj"))?;
        out[slot] = bl.op(
            OpKind::Reshape {
                shape: heads_shape.to_vec(),
            },
            &[flat],
            &format!("{name}_split_heads"),
        )?;
    }
    Ok(out)
}

fn softmax_core(bl: &mut Builder, cfg: &AttentionConfig, [q, k, v]: [TensorId; 3]) -> Result<TensorId, WorkloadError> {
    let kt = bl.op(OpKind::Transpose, &[k], "k_t")?;
    let scores = bl.op(OpKind::BatchMatMul, &[q, kt], "scores")?;
    let scaled = bl.scalar(
        OpKind::ScalarMul,
        scores,
        1.0 / (cfg.head_dim as f64).sqrt(),
        "scale",
    )?;
    let probs = bl.op(OpKind::Softmax, &[scaled], "softmax")?;
    bl.op(OpKind::BatchMatMul, &[probs, v], "context")
}

fn linear_core(bl: &mut Builder, [q, k, v]: [TensorId; 3]) -> Result<TensorId, WorkloadError> {
    let phi = OpKind::Activation(Activation::EluPlusOne);
    let fq = bl.op(phi.clone(), &[q], "phi_q")?;
    let fk = bl.op(phi, &[k], "phi_k")?;
    let fkt = bl.op(OpKind::Transpose, &[fk], "phi_k_t")?;
    let kv = bl.op(OpKind::BatchMatMul, &[fkt, v], "kv")?;
    let num = bl.op(OpKind::BatchMatMul, &[fq, kv], "numerator")?;
    let ones = bl.op(OpKind::OnesLike, &[v], "ones")?;
    let ksum = bl.op(OpKind::BatchMatMul, &[fkt, ones], "k_sum")?;
    let den = bl.op(OpKind::BatchMatMul, &[fq, ksum], "denominator")?;
    bl.op(OpKind::ElemwiseDiv, &[num, den], "linear_out")
}

fn favor_chain(bl: &mut Builder, x: TensorId, features: TensorId, prefix: &str) -> Result<TensorId, WorkloadError> {
    let d = *bl.shape(x).last().expect("rank 3");
    let scaled = bl.scalar(
        OpKind::ScalarMul,
        x,
        (d as f64).powf(-0.25),
        &format!("{prefix}_pre_scale"),
    )?;
    let projected = bl.op(
        OpKind::BatchMatMul,
        &[scaled, features],
        &format!("{prefix}_features"),
    )?;
    let shifted = bl.scalar(OpKind::ScalarAdd, projected, -0.5, &format!("{prefix}_offset"))?;
    bl.op(OpKind::Exp, &[shifted], &format!("{prefix}_prime"))
}

fn favor_core(bl: &mut Builder, cfg: &AttentionConfig, [q, k, v]: [TensorId; 3]) -> Result<TensorId, WorkloadError> {
    let m = cfg.favor_features.unwrap_or(DEFAULT_FAVOR_FEATURES);
    let features = bl.input(&[cfg.batch * cfg.heads, cfg.head_dim, m])?;
    let q_prime = favor_chain(bl, q, features, "q")?;
    let k_prime = favor_chain(bl, k, features, "k")?;

    let kt_norm = bl.op(OpKind::Transpose, &[k_prime], "k_prime_t_norm")?;
    let ones = bl.op(OpKind::OnesLike, &[v], "ones")?;
    let k_ones = bl.op(OpKind::BatchMatMul, &[kt_norm, ones], "k_ones")?;
    let att_norm = bl.op(OpKind::BatchMatMul, &[q_prime, k_ones], "att_norm")?;

    let kt_raw = bl.op(OpKind::Transpose, &[k_prime], "k_prime_t_raw")?;
    let kv = bl.op(OpKind::BatchMatMul, &[kt_raw, v], "kv")?;
    let att_raw = bl.op(OpKind::BatchMatMul, &[q_prime, kv], "att_raw")?;
    bl.op(OpKind::ElemwiseDiv, &[att_raw, att_norm], "favor_out")
}

fn attention_core(bl: &mut Builder, cfg: &AttentionConfig, qkv: [TensorId; 3]) -> Result<TensorId, WorkloadError> {
    match cfg.variant {
        AttentionVariant::Softmax => softmax_core(bl, cfg, qkv),
        AttentionVariant::LinearElu => linear_core(bl, qkv),
        AttentionVariant::Favor => favor_core(bl, cfg, qkv),
    }
}

fn attention_block(cfg: &AttentionConfig) -> Result<Graph, WorkloadError> {
    let mut bl = Builder::new(cfg.dtype);
    let x = if cfg.include_projections {
        Some(bl.input(&[cfg.batch * cfg.seq_len, cfg.hidden()])?)
    } else {
        None
    };
    let inputs = qkv(&mut bl, cfg, x)?;
    attention_core(&mut bl, cfg, inputs)?;
    Ok(bl.g)
}

/// `softmax(Q K^T / sqrt(D)) V` per batch-head.
pub fn build_softmax_attention(cfg: &AttentionConfig) -> Result<Graph, WorkloadError> {
    cfg.expect(AttentionVariant::Softmax)?;
    attention_block(cfg)
}

/// `phi(Q) (phi(K)^T V)` with `phi = elu + 1`, normalized by
/// `phi(Q) (phi(K)^T 1)`. Never materializes an `N x N` tensor.
pub fn build_linear_attention(cfg: &AttentionConfig) -> Result<Graph, WorkloadError> {
    cfg.expect(AttentionVariant::LinearElu)?;
    attention_block(cfg)
}

/// Random-feature attention. The q and k feature chains are independent
/// until the final products; `k_prime` is transposed separately for the
/// normalizer and for the value product.
pub fn build_favor_attention(cfg: &AttentionConfig) -> Result<Graph, WorkloadError> {
    cfg.expect(AttentionVariant::Favor)?;
    attention_block(cfg)
}

/// Mean and variance statistics as a side branch, then the affine part on
/// the main path.
fn layer_norm(bl: &mut Builder, y: TensorId, prefix: &str) -> Result<TensorId, WorkloadError> {
    let axis = bl.shape(y).len() - 1;
    bl.op_with(
        OpKind::Reduction { axis },
        &[y],
        &format!("{prefix}_mean"),
        Attrs::new(),
    )?;
    let sq = bl.op(OpKind::Square, &[y], &format!("{prefix}_square"))?;
    let var = bl.op(OpKind::Reduction { axis }, &[sq], &format!("{prefix}_var"))?;
    let var_eps = bl.scalar(OpKind::ScalarAdd, var, LAYER_NORM_EPS, &format!("{prefix}_eps"))?;
    bl.op(OpKind::Sqrt, &[var_eps], &format!("{prefix}_std"))?;
    let scaled = bl.scalar(OpKind::ScalarMul, y, 1.0, &format!("{prefix}_gamma"))?;
    bl.scalar(OpKind::ScalarAdd, scaled, 0.0, &format!("{prefix}_beta"))
}

/// Post-norm transformer layer over `x: [B*N, h*D]`; returns the layer output.
fn layer_into(
    bl: &mut Builder,
    cfg: &AttentionConfig,
    ffn: FfnSpec,
    x: TensorId,
    prefix: &str,
) -> Result<TensorId, WorkloadError> {
    let rows = cfg.batch * cfg.seq_len;
    let e = cfg.hidden();
    let heads = qkv(bl, cfg, Some(x))?;
    let ctx = attention_core(bl, cfg, heads)?;
    let merged = bl.op(
        OpKind::Reshape { shape: vec![rows, e] },
        &[ctx],
        &format!("{prefix}merge_heads"),
    )?;
    let wo = bl.input(&[e, e])?;
    let attn = bl.op(OpKind::MatMul, &[merged, wo], &format!("{prefix}out_proj"))?;
    let res1 = bl.op(OpKind::ElemwiseAdd, &[attn, x], &format!("{prefix}residual1"))?;
    let h1 = layer_norm(bl, res1, &format!("{prefix}ln1"))?;

    let inner = ffn.mult * e;
    let w1 = bl.input(&[e, inner])?;
    let up = bl.op(OpKind::MatMul, &[h1, w1], &format!("{prefix}ffn_up"))?;
    let act = bl.op(
        OpKind::Activation(ffn.activation),
        &[up],
        &format!("{prefix}ffn_{}", ffn.activation.name()),
    )?;
    let act_width = *bl.shape(act).last().expect("rank 2");
    let w2 = bl.input(&[act_width, e])?;
    let down = bl.op(OpKind::MatMul, &[act, w2], &format!("{prefix}ffn_down"))?;
    let res2 = bl.op(OpKind::ElemwiseAdd, &[down, h1], &format!("{prefix}residual2"))?;
    layer_norm(bl, res2, &format!("{prefix}ln2"))
}

/// Attention block, residual adds, two layer norms and a two-matmul FFN
/// (GELU, 4x width). `cfg.variant` is overridden by `variant`.
pub fn build_transformer_layer(cfg: &AttentionConfig, variant: AttentionVariant) -> Result<Graph, WorkloadError> {
    build_transformer_layer_with(&cfg.with_variant(variant), FfnSpec::default())
}

pub fn build_transformer_layer_with(cfg: &AttentionConfig, ffn: FfnSpec) -> Result<Graph, WorkloadError> {
    cfg.validate()?;
    positive(&[("ffn_mult", ffn.mult)])?;
    let mut bl = Builder::new(cfg.dtype);
    let x = bl.input(&[cfg.batch * cfg.seq_len, cfg.hidden()])?;
    layer_into(&mut bl, cfg, ffn, x, "")?;
    Ok(bl.g)
}

/// Transformer layer with the FFN activation set to `activation`. GLU gates
/// half of the FFN width, so the down projection shrinks accordingly.
pub fn build_activation_bench(activation: Activation, cfg: &AttentionConfig) -> Result<Graph, WorkloadError> {
    match activation {
        Activation::Relu | Activation::LeakyRelu | Activation::Gelu | Activation::Glu => {}
        other => {
            return Err(invalid(&format!(
                "activation bench supports relu, leaky_relu, gelu and glu, not {}",
                other.name()
            )))
        }
    }
    build_transformer_layer_with(
        cfg,
        FfnSpec {
            mult: DEFAULT_FFN_MULT,
            activation,
        },
    )
}

/// Embedding projection, `layers` chained softmax-attention layers and an
/// LM head over the vocabulary. The two model styles share the forward
/// graph; the style is recorded on the embedding and head nodes.
pub fn build_lm_stack(cfg: &LMConfig) -> Result<Graph, WorkloadError> {
    cfg.validate()?;
    let att = AttentionConfig {
        dtype: cfg.dtype,
        ..AttentionConfig::new(
            AttentionVariant::Softmax,
            cfg.seq_len,
            cfg.batch,
            cfg.heads,
            cfg.head_dim,
        )
    };
    let ffn = FfnSpec {
        mult: cfg.ffn_mult,
        activation: cfg.activation,
    };
    let rows = cfg.batch * cfg.seq_len;
    let e = att.hidden();
    let tag = || attrs([("model", cfg.model.name().into())]);

    let mut bl = Builder::new(cfg.dtype);
    let tokens = bl.input(&[rows, e])?;
    let w_emb = bl.input(&[e, e])?;
    let mut h = bl.op_with(OpKind::MatMul, &[tokens, w_emb], "embed_proj", tag())?;
    for layer in 0..cfg.layers {
        h = layer_into(&mut bl, &att, ffn, h, &format!("l{layer}_"))?;
    }
    let w_head = bl.input(&[e, cfg.vocab])?;
    bl.op_with(OpKind::MatMul, &[h, w_head], "lm_head", tag())?;
    Ok(bl.g)
}
