//! Op-kind to engine assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::OpKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EngineKind {
    MME,
    TPC,
    DMA,
}

impl EngineKind {
    pub const ALL: [EngineKind; 3] = [EngineKind::MME, EngineKind::TPC, EngineKind::DMA];

    /// Lane index used in traces and reports.
    pub fn index(self) -> usize {
        match self {
            EngineKind::MME => 0,
            EngineKind::TPC => 1,
            EngineKind::DMA => 2,
        }
    }

    pub fn is_compute(self) -> bool {
        !matches!(self, EngineKind::DMA)
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::MME => "MME",
            EngineKind::TPC => "TPC",
            EngineKind::DMA => "DMA",
        })
    }
}

impl FromStr for EngineKind {
    type Err = MappingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MME" => Ok(EngineKind::MME),
            "TPC" => Ok(EngineKind::TPC),
            "DMA" => Ok(EngineKind::DMA),
            other => Err(MappingError::UnknownEngine(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("MemCopy always runs on DMA; cannot place it on {0}")]
    MemCopyPinned(EngineKind),
    #[error("unknown op kind `{0}`")]
    UnknownKind(String),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
    #[error("malformed rules file: {0}")]
    Document(String),
}

const KIND_TAGS: [&str; 19] = [
    "MatMul",
    "BatchMatMul",
    "Transpose",
    "Reshape",
    "Softmax",
    "Exp",
    "Log",
    "Sqrt",
    "Square",
    "ElemwiseAdd",
    "ElemwiseSub",
    "ElemwiseMul",
    "ElemwiseDiv",
    "ScalarMul",
    "ScalarAdd",
    "Reduction",
    "Activation",
    "MemCopy",
    "OnesLike",
];

fn check_tag(tag: &str) -> Result<(), MappingError> {
    if KIND_TAGS.contains(&tag) {
        Ok(())
    } else {
        Err(MappingError::UnknownKind(tag.to_string()))
    }
}

/// Kind-level engine assignment. Rules are keyed by [`OpKind::tag`];
/// overrides are consulted first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MappingDocument", into = "MappingDocument")]
pub struct MappingTable {
    rules: BTreeMap<String, EngineKind>,
    overrides: BTreeMap<String, EngineKind>,
}

impl Default for MappingTable {
    fn default() -> Self {
        default_table()
    }
}

/// Only matrix products go to the MME; MemCopy goes to DMA; everything else
/// runs on the TPC cluster.
pub fn default_table() -> MappingTable {
    let rules = KIND_TAGS
        .iter()
        .map(|&tag| {
            let engine = match tag {
                "MatMul" | "BatchMatMul" => EngineKind::MME,
                "MemCopy" => EngineKind::DMA,
                _ => EngineKind::TPC,
            };
            (tag.to_string(), engine)
        })
        .collect();
    MappingTable {
        rules,
        overrides: BTreeMap::new(),
    }
}

impl MappingTable {
    pub fn assign_engine(&self, kind: &OpKind) -> EngineKind {
        let tag = kind.tag();
        self.overrides
            .get(tag)
            .or_else(|| self.rules.get(tag))
            .copied()
            .unwrap_or_else(|| default_engine(kind))
    }

    /// Returns a new table with `kind` forced onto `engine`. A later override
    /// of the same kind replaces an earlier one.
    pub fn with_override(&self, kind: &OpKind, engine: EngineKind) -> Result<Self, MappingError> {
        self.with_override_tag(kind.tag(), engine)
    }

    pub fn with_override_tag(&self, tag: &str, engine: EngineKind) -> Result<Self, MappingError> {
        check_tag(tag)?;
        check_pin(tag, engine)?;
        let mut next = self.clone();
        next.overrides.insert(tag.to_string(), engine);
        Ok(next)
    }

    pub fn overrides(&self) -> &BTreeMap<String, EngineKind> {
        &self.overrides
    }

    pub fn from_json(text: &str) -> Result<Self, MappingError> {
        serde_json::from_str(text).map_err(|e| MappingError::Document(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }
}

fn default_engine(kind: &OpKind) -> EngineKind {
    match kind {
        OpKind::MatMul | OpKind::BatchMatMul => EngineKind::MME,
        OpKind::MemCopy => EngineKind::DMA,
        _ => EngineKind::TPC,
    }
}

fn check_pin(tag: &str, engine: EngineKind) -> Result<(), MappingError> {
    if tag == "MemCopy" && engine != EngineKind::DMA {
        return Err(MappingError::MemCopyPinned(engine));
    }
    Ok(())
}

/// Rules file: `{"rules":{"MatMul":"MME",...},"overrides":{...}}`. Rules not
/// listed keep their default engine.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingDocument {
    #[serde(default)]
    rules: BTreeMap<String, String>,
    #[serde(default)]
    overrides: BTreeMap<String, String>,
}

impl TryFrom<MappingDocument> for MappingTable {
    type Error = MappingError;

    fn try_from(doc: MappingDocument) -> Result<Self, Self::Error> {
        let mut table = default_table();
        for (tag, engine) in doc.rules {
            check_tag(&tag)?;
            let engine: EngineKind = engine.parse()?;
            check_pin(&tag, engine)?;
            table.rules.insert(tag, engine);
        }
        for (tag, engine) in doc.overrides {
            table = table.with_override_tag(&tag, engine.parse()?)?;
        }
        Ok(table)
    }
}

impl From<MappingTable> for MappingDocument {
    fn from(t: MappingTable) -> Self {
        MappingDocument {
            rules: t.rules.into_iter().map(|(k, v)| (k, v.to_string())).collect(),
            overrides: t
                .overrides
                .into_iter()
                .map(|(k, v)| (k, v.to_string()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Activation;

    #[test]
    fn table_one_rows() {
        let t = default_table();
        // element-wise mul, matrix product, square (both rows), tensor +- tensor,
        // scalar * tensor, scalar +- tensor, sqrt, log
        assert_eq!(t.assign_engine(&OpKind::ElemwiseMul), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::MatMul), EngineKind::MME);
        assert_eq!(t.assign_engine(&OpKind::Square), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::ElemwiseAdd), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::ElemwiseSub), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::ScalarMul), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::ScalarAdd), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::Sqrt), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::Log), EngineKind::TPC);
    }

    #[test]
    fn defaults_for_kinds_outside_table_one() {
        let t = default_table();
        assert_eq!(t.assign_engine(&OpKind::Softmax), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::Exp), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::OnesLike), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::BatchMatMul), EngineKind::MME);
        assert_eq!(t.assign_engine(&OpKind::MemCopy), EngineKind::DMA);
        assert_eq!(
            t.assign_engine(&OpKind::Activation(Activation::Gelu)),
            EngineKind::TPC
        );
    }

    #[test]
    fn total_and_only_memcopy_on_dma() {
        let t = default_table();
        for kind in OpKind::representatives() {
            let e = t.assign_engine(&kind);
            assert_eq!(e == EngineKind::DMA, kind == OpKind::MemCopy, "{kind}");
            assert_eq!(e == EngineKind::MME, kind.is_matmul(), "{kind}");
        }
    }

    #[test]
    fn overrides_are_pure_and_last_wins() {
        let base = default_table();
        let forced = base
            .with_override(&OpKind::BatchMatMul, EngineKind::TPC)
            .unwrap();
        assert_eq!(forced.assign_engine(&OpKind::BatchMatMul), EngineKind::TPC);
        assert_eq!(base.assign_engine(&OpKind::BatchMatMul), EngineKind::MME);

        let twice = forced
            .with_override(&OpKind::BatchMatMul, EngineKind::MME)
            .unwrap();
        assert_eq!(twice.assign_engine(&OpKind::BatchMatMul), EngineKind::MME);
    }

    #[test]
    fn memcopy_cannot_leave_dma() {
        let base = default_table();
        assert_eq!(
            base.with_override(&OpKind::MemCopy, EngineKind::MME),
            Err(MappingError::MemCopyPinned(EngineKind::MME))
        );
        assert!(base.with_override(&OpKind::MemCopy, EngineKind::DMA).is_ok());
        assert!(MappingTable::from_json(r#"{"rules":{"MemCopy":"TPC"}}"#).is_err());
    }

    #[test]
    fn rules_file() {
        let t = MappingTable::from_json(
            r#"{"rules":{"MatMul":"MME","Softmax":"TPC"},"overrides":{"BatchMatMul":"TPC"}}"#,
        )
        .unwrap();
        assert_eq!(t.assign_engine(&OpKind::BatchMatMul), EngineKind::TPC);
        assert_eq!(t.assign_engine(&OpKind::MatMul), EngineKind::MME);
        let back = MappingTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);

        assert!(MappingTable::from_json(r#"{"rules":{"Conv":"MME"}}"#).is_err());
        assert!(MappingTable::from_json(r#"{"rules":{"MatMul":"GPU"}}"#).is_err());
        assert!(MappingTable::from_json(r#"{"bogus":{}}"#).is_err());
    }
}
