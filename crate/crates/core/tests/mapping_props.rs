use hetsim::graph::OpKind;
use hetsim::mapping::{EngineKind, MappingTable};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = OpKind> {
    prop::sample::select(OpKind::representatives())
}

fn engine() -> impl Strategy<Value = EngineKind> {
    prop::sample::select(EngineKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn every_kind_has_an_engine(k in kind()) {
        let e = MappingTable::default().assign_engine(&k);
        let expect = match k {
            OpKind::MatMul | OpKind::BatchMatMul => EngineKind::MME,
            OpKind::MemCopy => EngineKind::DMA,
            _ => EngineKind::TPC,
        };
        prop_assert_eq!(e, expect);
    }

    /// Replays a sequence of overrides: accepted ones win in order, rejected
    /// ones change nothing, and the source table is never touched.
    #[test]
    fn overrides_are_pure_and_last_wins(ops in prop::collection::vec((kind(), engine()), 0..12)) {
        let base = MappingTable::default();
        let pristine = base.clone();
        let mut table = base.clone();
        let mut expected = std::collections::BTreeMap::new();
        for (k, e) in &ops {
            let before = table.clone();
            match table.with_override(k, *e) {
                Ok(next) => {
                    prop_assert_eq!(next.assign_engine(k), *e);
                    prop_assert_eq!(&table, &before);
                    table = next;
                    expected.insert(k.tag(), *e);
                }
                Err(_) => {
                    // MemCopy is pinned to DMA; nothing else may go there
                    let pinned = (*k == OpKind::MemCopy) != (*e == EngineKind::DMA);
                    prop_assert!(pinned);
                }
            }
        }
        prop_assert_eq!(&base, &pristine);
        for k in OpKind::representatives() {
            let want = expected.get(k.tag()).copied().unwrap_or_else(|| pristine.assign_engine(&k));
            prop_assert_eq!(table.assign_engine(&k), want);
        }
        let back = MappingTable::from_json(&table.to_json()).unwrap();
        prop_assert_eq!(back, table);
    }
}
