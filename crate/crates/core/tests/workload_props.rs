use std::collections::BTreeSet;

use hetsim::cost::op_flops;
use hetsim::graph::{Activation, DType, Graph};
use hetsim::mapping::{EngineKind, MappingTable};
use hetsim::workloads::{
    build_activation_bench, build_batched_matmul, build_favor_attention, build_linear_attention,
    build_lm_stack, build_softmax_attention, build_transformer_layer, AttentionConfig,
    AttentionVariant, LMConfig, LmModel,
};
use proptest::prelude::*;

fn dtype() -> impl Strategy<Value = DType> {
    prop_oneof![Just(DType::Fp32), Just(DType::Bf16)]
}

fn attention(variant: AttentionVariant) -> impl Strategy<Value = AttentionConfig> {
    (1usize..64, 1usize..5, 1usize..5, 1usize..20, 1usize..40, any::<bool>(), dtype()).prop_map(
        move |(n, b, h, d, m, proj, dt)| {
            let mut cfg = AttentionConfig::new(variant, n, b, h, d);
            if variant == AttentionVariant::Favor {
                cfg.favor_features = Some(m);
            }
            cfg.include_projections = proj;
            cfg.dtype = dt;
            cfg
        },
    )
}

fn any_attention() -> impl Strategy<Value = AttentionConfig> {
    prop::sample::select(AttentionVariant::ALL.to_vec()).prop_flat_map(attention)
}

fn block(cfg: &AttentionConfig) -> Graph {
    match cfg.variant {
        AttentionVariant::Softmax => build_softmax_attention(cfg),
        AttentionVariant::LinearElu => build_linear_attention(cfg),
        AttentionVariant::Favor => build_favor_attention(cfg),
    }
    .unwrap()
}

fn total_flops(g: &Graph) -> u64 {
    g.nodes().iter().map(|n| op_flops(n, g).unwrap()).sum()
}

fn named<'a>(g: &'a Graph, name: &str) -> &'a hetsim::graph::OpNode {
    g.nodes()
        .iter()
        .find(|n| n.label() == Some(name))
        .unwrap_or_else(|| panic!("no node named {name}"))
}

/// Node indices reachable backwards from `index`, including itself.
fn ancestors(g: &Graph, index: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![index];
    while let Some(i) = stack.pop() {
        if seen.insert(i) {
            stack.extend(g.predecessors(i));
        }
    }
    seen
}

fn index_of(g: &Graph, name: &str) -> usize {
    let id = named(g, name).id;
    g.nodes().iter().position(|n| n.id == id).unwrap()
}

proptest! {
    #[test]
    fn attention_blocks_validate(cfg in any_attention()) {
        let g = block(&cfg);
        prop_assert_eq!(g.validate(), Ok(()));
        // program order is a topological order
        for (i, _) in g.nodes().iter().enumerate() {
            prop_assert!(g.predecessors(i).iter().all(|&p| p < i));
        }
    }

    #[test]
    fn layers_validate(cfg in any_attention()) {
        let g = build_transformer_layer(&cfg, cfg.variant).unwrap();
        prop_assert_eq!(g.validate(), Ok(()));
        // only matmuls carry MME flops
        let m = MappingTable::default();
        for n in g.nodes() {
            if m.assign_engine(&n.kind) == EngineKind::MME && op_flops(n, &g).unwrap() > 0 {
                prop_assert!(n.kind.is_matmul(), "{}", n.kind);
            }
        }
    }

    #[test]
    fn activation_benches_validate(
        cfg in attention(AttentionVariant::Softmax),
        act in prop::sample::select(vec![Activation::Relu, Activation::LeakyRelu, Activation::Gelu, Activation::Glu]),
    ) {
        let g = build_activation_bench(act, &cfg).unwrap();
        prop_assert_eq!(g.validate(), Ok(()));
    }

    #[test]
    fn lm_stacks_validate(
        model in prop_oneof![Just(LmModel::GptStyle), Just(LmModel::BertStyle)],
        layers in 1usize..4, n in 1usize..32, b in 1usize..3, h in 1usize..3, d in 1usize..8,
        vocab in 1usize..100,
    ) {
        let mut cfg = LMConfig::new(model, layers, n, b, h, d);
        cfg.vocab = vocab;
        let g = build_lm_stack(&cfg).unwrap();
        prop_assert_eq!(g.validate(), Ok(()));
        // node count grows linearly in the layer count
        let mut more = cfg.clone();
        more.layers += 1;
        let mut most = cfg.clone();
        most.layers += 2;
        let (a, b2, c) = (g.len(), build_lm_stack(&more).unwrap().len(), build_lm_stack(&most).unwrap().len());
        prop_assert_eq!(b2 - a, c - b2);
    }

    #[test]
    fn batched_matmul_validates(b in 1usize..9, m in 1usize..50, k in 1usize..50, n in 1usize..50, dt in dtype()) {
        let g = build_batched_matmul(b, m, k, n, dt).unwrap();
        prop_assert_eq!(g.validate(), Ok(()));
        prop_assert_eq!(total_flops(&g), 2 * (b * m * k * n) as u64);
    }

    #[test]
    fn builders_are_deterministic(cfg in any_attention()) {
        prop_assert_eq!(block(&cfg).to_json(), block(&cfg).to_json());
        let a = build_transformer_layer(&cfg, cfg.variant).unwrap();
        let b = build_transformer_layer(&cfg, cfg.variant).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn flops_scale_with_sequence_length(
        variant in prop::sample::select(AttentionVariant::ALL.to_vec()),
        n in 64usize..1024, b in 1usize..4, h in 1usize..4, d in 1usize..32,
    ) {
        let cfg = AttentionConfig::new(variant, n, b, h, d);
        let mut doubled = cfg.clone();
        doubled.seq_len *= 2;
        let ratio = total_flops(&block(&doubled)) as f64 / total_flops(&block(&cfg)) as f64;
        let expect = if variant == AttentionVariant::Softmax { 4.0 } else { 2.0 };
        prop_assert!((ratio - expect).abs() <= 0.05 * expect, "{}: {}", variant, ratio);
    }

    #[test]
    fn linear_attention_has_no_square_intermediate(cfg in attention(AttentionVariant::LinearElu)) {
        let g = block(&cfg);
        let n = cfg.seq_len;
        if n > cfg.head_dim {
            for (_, spec) in g.tensors() {
                let s = spec.shape();
                prop_assert!(!(s.len() >= 2 && s[s.len() - 1] == n && s[s.len() - 2] == n), "{:?}", s);
            }
        }
    }

    #[test]
    fn favor_chains_share_no_nodes(cfg in attention(AttentionVariant::Favor)) {
        let g = block(&cfg);
        let q = ancestors(&g, index_of(&g, "q_prime"));
        let k = ancestors(&g, index_of(&g, "k_prime"));
        prop_assert!(q.is_disjoint(&k), "shared: {:?}", q.intersection(&k).collect::<Vec<_>>());
    }
}

#[test]
fn softmax_matmul_flops() {
    let cfg = AttentionConfig::new(AttentionVariant::Softmax, 96, 3, 2, 16);
    let g = block(&cfg);
    let mm: u64 = g
        .nodes()
        .iter()
        .filter(|n| n.kind.is_matmul())
        .map(|n| op_flops(n, &g).unwrap())
        .sum();
    let (n, b, h, d) = (96u64, 3u64, 2u64, 16u64);
    assert_eq!(mm, 2 * b * h * (2 * n * n * d));
}

#[test]
fn degenerate_configs() {
    for variant in AttentionVariant::ALL {
        let mut cfg = AttentionConfig::new(variant, 1, 1, 1, 1);
        if variant == AttentionVariant::Favor {
            cfg.favor_features = Some(1);
        }
        assert_eq!(block(&cfg).validate(), Ok(()));
    }
    assert!(AttentionConfig::new(AttentionVariant::Softmax, 0, 1, 1, 1).validate().is_err());
    assert!(build_lm_stack(&LMConfig::new(LmModel::GptStyle, 0, 8, 1, 1, 4)).is_err());
}

#[test]
fn linear_attention_flops_double_with_n() {
    let flops = |n| {
        let g = block(&AttentionConfig::new(AttentionVariant::LinearElu, n, 2, 2, 32));
        g.nodes()
            .iter()
            .filter(|x| x.kind.is_matmul())
            .map(|x| op_flops(x, &g).unwrap())
            .sum::<u64>() as f64
    };
    let r = flops(4096) / flops(2048);
    assert!((r - 2.0).abs() <= 0.02, "{r}");
}
