//! Typed tensor compute-graph IR.
//!
//! Graphs are append-only DAGs: tensors are registered first (graph inputs)
//! and every op creates exactly one fresh output tensor whose spec comes from
//! [`infer_shape`]. Values are never computed; only shapes and dtypes flow
//! through the IR.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest tensor rank accepted by the vector cores.
pub const MAX_RANK: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Fp32,
    Bf16,
}

impl DType {
    pub fn size_bytes(self) -> u64 {
        match self {
            DType::Fp32 => 4,
            DType::Bf16 => 2,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::Fp32 => "fp32",
            DType::Bf16 => "bf16",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Shape and element type of a tensor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTensorSpec")]
pub struct TensorSpec {
    shape: Vec<usize>,
    dtype: DType,
}

#[derive(Deserialize)]
struct RawTensorSpec {
    shape: Vec<usize>,
    dtype: DType,
}

impl TryFrom<RawTensorSpec> for TensorSpec {
    type Error = GraphError;

    fn try_from(raw: RawTensorSpec) -> Result<Self, Self::Error> {
        TensorSpec::new(raw.shape, raw.dtype)
    }
}

impl TensorSpec {
    pub fn new(shape: impl Into<Vec<usize>>, dtype: DType) -> Result<Self, GraphError> {
        let shape = shape.into();
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(GraphError::InvalidShape {
                shape,
                reason: "rank must be between 1 and 5",
            });
        }
        if shape.contains(&0) {
            return Err(GraphError::InvalidShape {
                shape,
                reason: "every dimension must be at least 1",
            });
        }
        if shape
            .iter()
            .try_fold(dtype.size_bytes(), |acc, &d| acc.checked_mul(d as u64))
            .is_none()
        {
            return Err(GraphError::InvalidShape {
                shape,
                reason: "byte size overflows u64",
            });
        }
        Ok(TensorSpec { shape, dtype })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn element_count(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn byte_size(&self) -> u64 {
        self.element_count() * self.dtype.size_bytes()
    }

    /// Length of the last (innermost) dimension.
    pub fn innermost(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    fn with_shape(&self, shape: Vec<usize>) -> Result<TensorSpec, GraphError> {
        TensorSpec::new(shape, self.dtype)
    }
}

impl fmt::Display for TensorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{}", self.shape, self.dtype)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Gelu,
    Glu,
    EluPlusOne,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Gelu,
        Activation::Glu,
        Activation::EluPlusOne,
        Activation::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Gelu => "gelu",
            Activation::Glu => "glu",
            Activation::EluPlusOne => "elu_plus_one",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Activation> {
        Activation::ALL.into_iter().find(|a| a.name() == name)
    }
}

/// Operation kinds understood by the IR.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    MatMul,
    BatchMatMul,
    /// Swaps the last two axes.
    Transpose,
    /// Metadata-only view change; element count is preserved.
    Reshape { shape: Vec<usize> },
    /// Row softmax over the last axis.
    Softmax,
    Exp,
    Log,
    Sqrt,
    Square,
    ElemwiseAdd,
    ElemwiseSub,
    ElemwiseMul,
    ElemwiseDiv,
    ScalarMul,
    ScalarAdd,
    /// Sum over `axis`, keeping it as a size-1 dimension.
    Reduction { axis: usize },
    Activation(Activation),
    MemCopy,
    OnesLike,
}

impl OpKind {
    /// One representative of every kind, with every activation variant.
    pub fn representatives() -> Vec<OpKind> {
        let mut kinds = vec![
            OpKind::MatMul,
            OpKind::BatchMatMul,
            OpKind::Transpose,
            OpKind::Reshape { shape: vec![1] },
            OpKind::Softmax,
            OpKind::Exp,
            OpKind::Log,
            OpKind::Sqrt,
            OpKind::Square,
            OpKind::ElemwiseAdd,
            OpKind::ElemwiseSub,
            OpKind::ElemwiseMul,
            OpKind::ElemwiseDiv,
            OpKind::ScalarMul,
            OpKind::ScalarAdd,
            OpKind::Reduction { axis: 0 },
            OpKind::MemCopy,
            OpKind::OnesLike,
        ];
        kinds.extend(Activation::ALL.into_iter().map(OpKind::Activation));
        kinds
    }

    /// Variant name without payload, used as the key in mapping rules.
    pub fn tag(&self) -> &'static str {
        match self {
            OpKind::MatMul => "MatMul",
            OpKind::BatchMatMul => "BatchMatMul",
            OpKind::Transpose => "Transpose",
            OpKind::Reshape { .. } => "Reshape",
            OpKind::Softmax => "Softmax",
            OpKind::Exp => "Exp",
            OpKind::Log => "Log",
            OpKind::Sqrt => "Sqrt",
            OpKind::Square => "Square",
            OpKind::ElemwiseAdd => "ElemwiseAdd",
            OpKind::ElemwiseSub => "ElemwiseSub",
            OpKind::ElemwiseMul => "ElemwiseMul",
            OpKind::ElemwiseDiv => "ElemwiseDiv",
            OpKind::ScalarMul => "ScalarMul",
            OpKind::ScalarAdd => "ScalarAdd",
            OpKind::Reduction { .. } => "Reduction",
            OpKind::Activation(_) => "Activation",
            OpKind::MemCopy => "MemCopy",
            OpKind::OnesLike => "OnesLike",
        }
    }

    pub fn is_matmul(&self) -> bool {
        matches!(self, OpKind::MatMul | OpKind::BatchMatMul)
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::MatMul
            | OpKind::BatchMatMul
            | OpKind::ElemwiseAdd
            | OpKind::ElemwiseSub
            | OpKind::ElemwiseMul
            | OpKind::ElemwiseDiv => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Activation(a) => write!(f, "Activation({})", a.name()),
            OpKind::Reduction { axis } => write!(f, "Reduction(axis={axis})"),
            other => f.write_str(other.tag()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Int(i) => Some(*i as f64),
            AttrValue::Float(x) => Some(*x),
            AttrValue::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<f64> for AttrValue {
    fn from(x: f64) -> Self {
        AttrValue::Float(x)
    }
}

impl From<i64> for AttrValue {
    fn from(x: i64) -> Self {
        AttrValue::Int(x)
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Text(s.to_string())
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

/// Builds an attribute map from `(key, value)` pairs.
pub fn attrs<const N: usize>(pairs: [(&str, AttrValue); N]) -> Attrs {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: NodeId,
    pub kind: OpKind,
    #[serde(default)]
    pub attrs: Attrs,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
}

impl OpNode {
    /// Optional human-readable label carried in the `name` attribute.
    pub fn label(&self) -> Option<&str> {
        self.attrs.get("name").and_then(AttrValue::as_str)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },
    #[error("unknown tensor {0}")]
    UnknownTensor(TensorId),
    #[error("{kind} expects {expected} input(s), got {got}")]
    Arity {
        kind: String,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch in {kind}: {detail}")]
    ShapeMismatch { kind: String, detail: String },
    #[error("{kind} requires numeric attribute `{attr}`")]
    MissingAttr { kind: String, attr: &'static str },
    #[error("malformed graph document: {0}")]
    Document(String),
}

/// A structural problem found by [`Graph::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    CycleDetected { node: NodeId },
    DanglingTensor { node: NodeId, tensor: TensorId },
    DuplicateNodeId { node: NodeId },
    MultipleProducers { tensor: TensorId },
    /// A node consumes a tensor produced later in program order.
    OutOfOrder { node: NodeId, tensor: TensorId },
    ShapeInconsistency { node: NodeId, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CycleDetected { node } => write!(f, "cycle through {node}"),
            Violation::DanglingTensor { node, tensor } => {
                write!(f, "{node} references missing tensor {tensor}")
            }
            Violation::DuplicateNodeId { node } => write!(f, "duplicate node id {node}"),
            Violation::MultipleProducers { tensor } => {
                write!(f, "tensor {tensor} has more than one producer")
            }
            Violation::OutOfOrder { node, tensor } => {
                write!(f, "{node} consumes {tensor} before it is produced")
            }
            Violation::ShapeInconsistency { node, detail } => write!(f, "{node}: {detail}"),
        }
    }
}

fn mismatch(kind: &OpKind, detail: String) -> GraphError {
    GraphError::ShapeMismatch {
        kind: kind.to_string(),
        detail,
    }
}

/// Output spec of `kind` applied to `inputs`.
pub fn infer_shape(
    kind: &OpKind,
    inputs: &[&TensorSpec],
    attrs: &Attrs,
) -> Result<TensorSpec, GraphError> {
    if inputs.len() != kind.arity() {
        return Err(GraphError::Arity {
            kind: kind.to_string(),
            expected: kind.arity(),
            got: inputs.len(),
        });
    }
    if inputs.len() == 2 && inputs[0].dtype() != inputs[1].dtype() {
        return Err(mismatch(
            kind,
            format!("dtypes differ: {} vs {}", inputs[0], inputs[1]),
        ));
    }
    let x = inputs[0];
    match kind {
        OpKind::MatMul => {
            let (a, b) = (x.shape(), inputs[1].shape());
            if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                return Err(mismatch(kind, format!("{a:?} x {b:?}")));
            }
            x.with_shape(vec![a[0], b[1]])
        }
        OpKind::BatchMatMul => {
            let (a, b) = (x.shape(), inputs[1].shape());
            let r = a.len();
            if r < 3 || b.len() != r || a[..r - 2] != b[..r - 2] || a[r - 1] != b[r - 2] {
                return Err(mismatch(kind, format!("{a:?} x {b:?}")));
            }
            let mut out = a[..r - 1].to_vec();
            out.push(b[r - 1]);
            x.with_shape(out)
        }
        OpKind::Transpose => {
            if x.rank() < 2 {
                return Err(mismatch(kind, format!("rank {} < 2", x.rank())));
            }
            let mut out = x.shape().to_vec();
            let r = out.len();
            out.swap(r - 1, r - 2);
            x.with_shape(out)
        }
        OpKind::Reshape { shape } => {
            let out = x.with_shape(shape.clone())?;
            if out.element_count() != x.element_count() {
                return Err(mismatch(
                    kind,
                    format!("cannot view {:?} as {:?}", x.shape(), shape),
                ));
            }
            Ok(out)
        }
        OpKind::ScalarMul | OpKind::ScalarAdd => {
            if attrs.get("scalar").and_then(AttrValue::as_f64).is_none() {
                return Err(GraphError::MissingAttr {
                    kind: kind.to_string(),
                    attr: "scalar",
                });
            }
            Ok(x.clone())
        }
        OpKind::ElemwiseAdd | OpKind::ElemwiseSub | OpKind::ElemwiseMul | OpKind::ElemwiseDiv => {
            if x.shape() != inputs[1].shape() {
                return Err(mismatch(
                    kind,
                    format!("{:?} vs {:?} (no broadcasting)", x.shape(), inputs[1].shape()),
                ));
            }
            Ok(x.clone())
        }
        OpKind::Reduction { axis } => {
            if *axis >= x.rank() {
                return Err(mismatch(
                    kind,
                    format!("axis {axis} out of range for rank {}", x.rank()),
                ));
            }
            let mut out = x.shape().to_vec();
            out[*axis] = 1;
            x.with_shape(out)
        }
        OpKind::Activation(Activation::Glu) => {
            let last = x.innermost();
            if !last.is_multiple_of(2) {
                return Err(mismatch(kind, format!("gated dim {last} is odd")));
            }
            let mut out = x.shape().to_vec();
            *out.last_mut().expect("rank >= 1") = last / 2;
            x.with_shape(out)
        }
        OpKind::Softmax
        | OpKind::Exp
        | OpKind::Log
        | OpKind::Sqrt
        | OpKind::Square
        | OpKind::Activation(_)
        | OpKind::MemCopy
        | OpKind::OnesLike => Ok(x.clone()),
    }
}

/// A tensor compute graph in program order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Graph {
    tensors: BTreeMap<TensorId, TensorSpec>,
    nodes: Vec<OpNode>,
    producers: HashMap<TensorId, usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a graph input tensor.
    pub fn add_tensor(&mut self, shape: &[usize], dtype: DType) -> Result<TensorId, GraphError> {
        let spec = TensorSpec::new(shape, dtype)?;
        Ok(self.insert_tensor(spec))
    }

    fn insert_tensor(&mut self, spec: TensorSpec) -> TensorId {
        let id = self.next_tensor_id();
        self.tensors.insert(id, spec);
        id
    }

    fn next_tensor_id(&self) -> TensorId {
        self.tensors
            .keys()
            .next_back()
            .map_or(TensorId(0), |t| TensorId(t.0 + 1))
    }

    fn next_node_id(&self) -> NodeId {
        self.nodes
            .iter()
            .map(|n| n.id)
            .max()
            .map_or(NodeId(0), |n| NodeId(n.0 + 1))
    }

    /// Appends an op; its output tensor is created from [`infer_shape`].
    pub fn add_op(
        &mut self,
        kind: OpKind,
        inputs: &[TensorId],
        attrs: Attrs,
    ) -> Result<NodeId, GraphError> {
        let specs = inputs
            .iter()
            .map(|t| self.tensors.get(t).ok_or(GraphError::UnknownTensor(*t)))
            .collect::<Result<Vec<_>, _>>()?;
        let out = infer_shape(&kind, &specs, &attrs)?;
        let output = self.insert_tensor(out);
        let id = self.next_node_id();
        self.producers.insert(output, self.nodes.len());
        self.nodes.push(OpNode {
            id,
            kind,
            attrs,
            inputs: inputs.to_vec(),
            output,
        });
        Ok(id)
    }

    /// Convenience for builders: appends an op and returns its output tensor.
    pub fn op(
        &mut self,
        kind: OpKind,
        inputs: &[TensorId],
        attrs: Attrs,
    ) -> Result<TensorId, GraphError> {
        self.add_op(kind, inputs, attrs)?;
        Ok(self.nodes.last().expect("just pushed").output)
    }

    pub fn tensor(&self, id: TensorId) -> Option<&TensorSpec> {
        self.tensors.get(&id)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (TensorId, &TensorSpec)> {
        self.tensors.iter().map(|(id, s)| (*id, s))
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Index (program position) of the node producing `tensor`.
    pub fn producer_index(&self, tensor: TensorId) -> Option<usize> {
        self.producers.get(&tensor).copied()
    }

    pub fn producer(&self, tensor: TensorId) -> Option<&OpNode> {
        self.producer_index(tensor).map(|i| &self.nodes[i])
    }

    /// Tensors that no node produces.
    pub fn inputs(&self) -> Vec<TensorId> {
        self.tensors
            .keys()
            .filter(|t| !self.producers.contains_key(t))
            .copied()
            .collect()
    }

    /// Input specs of a node; fails on dangling references.
    pub fn input_specs(&self, node: &OpNode) -> Result<Vec<&TensorSpec>, GraphError> {
        node.inputs
            .iter()
            .map(|t| self.tensors.get(t).ok_or(GraphError::UnknownTensor(*t)))
            .collect()
    }

    pub fn output_spec(&self, node: &OpNode) -> Result<&TensorSpec, GraphError> {
        self.tensors
            .get(&node.output)
            .ok_or(GraphError::UnknownTensor(node.output))
    }

    /// Program-order indices of the nodes `index` depends on, deduplicated
    /// and sorted.
    pub fn predecessors(&self, index: usize) -> Vec<usize> {
        let mut preds: Vec<usize> = self.nodes[index]
            .inputs
            .iter()
            .filter_map(|t| self.producer_index(*t))
            .collect();
        preds.sort_unstable();
        preds.dedup();
        preds
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Returns every structural violation; an empty list means the graph is
    /// well formed.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();

        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                violations.push(Violation::DuplicateNodeId { node: n.id });
            }
        }

        let mut producer_count: HashMap<TensorId, usize> = HashMap::new();
        for n in &self.nodes {
            *producer_count.entry(n.output).or_default() += 1;
            for t in n.inputs.iter().chain(std::iter::once(&n.output)) {
                if !self.tensors.contains_key(t) {
                    violations.push(Violation::DanglingTensor {
                        node: n.id,
                        tensor: *t,
                    });
                }
            }
        }
        for (t, count) in &producer_count {
            if *count > 1 {
                violations.push(Violation::MultipleProducers { tensor: *t });
            }
        }

        // Kahn's algorithm over node indices.
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for t in &node.inputs {
                if let Some(p) = self.producer_index(*t) {
                    succs[p].push(i);
                    indegree[i] += 1;
                    if p >= i {
                        violations.push(Violation::OutOfOrder {
                            node: node.id,
                            tensor: *t,
                        });
                    }
                }
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = queue.pop_front() {
            visited += 1;
            for &s in &succs[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        if visited < n {
            for (i, d) in indegree.iter().enumerate() {
                if *d > 0 {
                    violations.push(Violation::CycleDetected {
                        node: self.nodes[i].id,
                    });
                }
            }
        }

        for node in &self.nodes {
            let (Ok(specs), Ok(out)) = (self.input_specs(node), self.output_spec(node)) else {
                continue;
            };
            match infer_shape(&node.kind, &specs, &node.attrs) {
                Ok(expected) if &expected == out => {}
                Ok(expected) => violations.push(Violation::ShapeInconsistency {
                    node: node.id,
                    detail: format!("declared {out}, inferred {expected}"),
                }),
                Err(e) => violations.push(Violation::ShapeInconsistency {
                    node: node.id,
                    detail: e.to_string(),
                }),
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Assembles a graph from raw parts without checking it; pair with
    /// [`Graph::validate`].
    pub fn from_parts(
        tensors: impl IntoIterator<Item = (TensorId, TensorSpec)>,
        nodes: Vec<OpNode>,
    ) -> Graph {
        let tensors: BTreeMap<_, _> = tensors.into_iter().collect();
        let mut producers = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            producers.entry(n.output).or_insert(i);
        }
        Graph {
            tensors,
            nodes,
            producers,
        }
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            tensors: self
                .tensors
                .iter()
                .map(|(id, spec)| TensorEntry {
                    id: *id,
                    shape: spec.shape.clone(),
                    dtype: spec.dtype,
                })
                .collect(),
            nodes: self.nodes.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph serializes")
    }

    /// Parses a graph document. Only the encoding is checked here; run
    /// [`Graph::validate`] for structural checks.
    pub fn from_json(text: &str) -> Result<Graph, GraphError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| GraphError::Document(e.to_string()))?;
        Graph::from_document(doc)
    }

    pub fn from_document(doc: GraphDocument) -> Result<Graph, GraphError> {
        let mut tensors = BTreeMap::new();
        for entry in doc.tensors {
            let spec = TensorSpec::new(entry.shape, entry.dtype)?;
            if tensors.insert(entry.id, spec).is_some() {
                return Err(GraphError::Document(format!(
                    "duplicate tensor id {}",
                    entry.id
                )));
            }
        }
        Ok(Graph::from_parts(tensors, doc.nodes))
    }
}

/// Serialized form: `{"tensors":[{id,shape,dtype}],"nodes":[{id,kind,attrs,inputs,output}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub tensors: Vec<TensorEntry>,
    pub nodes: Vec<OpNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub id: TensorId,
    pub shape: Vec<usize>,
    pub dtype: DType,
}
