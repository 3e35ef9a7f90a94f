//! Headline acceptance checks. Each criterion prints one PASS/FAIL line;
//! the binary exits non-zero if any criterion fails.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::ops::{Add, Div, Mul, Sub};
use std::time::{Duration, Instant};

use hetsim::calibration::{fit_params, parse_table, TABLE2_CSV};
use hetsim::cost::{default_params, op_flops, CostParams, OpClass};
use hetsim::graph::{Activation, Attrs, DType, Graph, OpKind};
use hetsim::mapping::{EngineKind, MappingTable};
use hetsim::report::{build_report, fit_scaling_exponent, Report};
use hetsim::scheduler::{brute_force_tasks, schedule_tasks, simulate, ScheduleMode, Task, Timeline};
use hetsim::trace::{interval_micros, parse_chrome_trace, to_chrome_trace_string, validate_trace};
use hetsim::workloads::{
    build_activation_bench, build_batched_matmul, build_favor_attention, build_linear_attention,
    build_lm_stack, build_softmax_attention, build_transformer_layer, AttentionConfig,
    AttentionVariant, LMConfig, LmModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(
    params: &CostParams,
    graph: &Graph,
    mode: ScheduleMode,
) -> (Graph, Timeline, Report) {
    let (g, tl) = simulate(graph, &MappingTable::default(), params, mode).expect("simulates");
    tl.validate_against(&g).expect("valid timeline");
    let report = build_report(&tl, BTreeMap::new());
    (g, tl, report)
}

fn layer(variant: AttentionVariant) -> Graph {
    let cfg = AttentionConfig::profiled(variant);
    build_transformer_layer(&cfg, variant).unwrap()
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

// Published speedups, TPC time over MME time.
const TABLE2_SPEEDUPS: [(usize, f64, f64); 5] = [
    (128, 1.3, 0.30),
    (256, 5.7, 0.10),
    (512, 6.7, 0.10),
    (1024, 6.7, 0.10),
    (2048, 6.6, 0.10),
];

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let params = fit_params(&parse_table(TABLE2_CSV).unwrap()).unwrap();
    let on_tpc = MappingTable::default()
        .with_override(&OpKind::BatchMatMul, EngineKind::TPC)
        .unwrap();
    let mut ok = true;
    let mut got = Vec::new();
    for (size, target, tol) in TABLE2_SPEEDUPS {
        let g = build_batched_matmul(64, size, size, size, DType::Fp32).unwrap();
        let mme = simulate(&g, &MappingTable::default(), &params, ScheduleMode::Lookahead)
            .unwrap()
            .1
            .makespan();
        let tpc = simulate(&g, &on_tpc, &params, ScheduleMode::Lookahead)
            .unwrap()
            .1
            .makespan();
        let ratio = tpc / mme;
        ok &= within(ratio, target, tol);
        got.push(format!("{size}:{ratio:.2}"));
    }
    let elapsed = t0.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    outcome(
        ok,
        format!("TPC/MME speedups {} in {elapsed:.2?}", got.join(" ")),
    )
}

fn criterion_2(params: &CostParams) -> Outcome {
    let t0 = Instant::now();
    let (_, _, soft) = run(params, &layer(AttentionVariant::Softmax), ScheduleMode::Lookahead);
    let (_, _, lin) = run(params, &layer(AttentionVariant::LinearElu), ScheduleMode::Lookahead);
    let share = soft.class_share(EngineKind::TPC, OpClass::Softmax);
    let idle_soft = soft.engine(EngineKind::MME).idle_fraction;
    let idle_lin = lin.engine(EngineKind::MME).idle_fraction;
    // the other reading of the claim, reported only
    let of_makespan = share * soft.engine(EngineKind::TPC).busy_ms / soft.makespan_ms;
    let elapsed = t0.elapsed();
    let pass = share >= 0.8 && idle_soft > idle_lin && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "softmax share of TPC busy {share:.3} (need >= 0.8), of makespan {of_makespan:.3}; MME idle softmax {idle_soft:.3} vs linear {idle_lin:.3}; {elapsed:.2?}"
        ),
    )
}

fn criterion_3(params: &CostParams) -> Outcome {
    let span = |v| run(params, &layer(v), ScheduleMode::Lookahead).2.makespan_ms;
    let s = span(AttentionVariant::Softmax);
    let l = span(AttentionVariant::LinearElu);
    let f = span(AttentionVariant::Favor);
    let (rl, rf) = (s / l, s / f);
    outcome(
        (4.5..=7.5).contains(&rl) && (1.5..=3.0).contains(&rf),
        format!("softmax/linear {rl:.3} in [4.5, 7.5], softmax/favor {rf:.3} in [1.5, 3.0]"),
    )
}

fn criterion_4(params: &CostParams) -> Outcome {
    let g = layer(AttentionVariant::Favor);
    let (_, naive_tl, naive) = run(params, &g, ScheduleMode::Naive);
    let (_, _, look) = run(params, &g, ScheduleMode::Lookahead);

    // Work from the emitted trace, not the timeline.
    let trace = parse_chrome_trace(&to_chrome_trace_string(&naive_tl)).unwrap();
    let mme = EngineKind::MME.index() as u64;
    let tpc = EngineKind::TPC.index() as u64;
    let mut gaps = Vec::new();
    let mut cursor = 0.0f64;
    for e in trace.lane(mme) {
        if e.dur_us > 1e-3 {
            if e.start_us > cursor {
                gaps.push((cursor, e.start_us));
            }
            cursor = cursor.max(e.end_us());
        }
    }
    let overlapping = gaps
        .iter()
        .filter(|&&(a, b)| {
            trace
                .lane(tpc)
                .iter()
                .any(|e| e.cat == "exp" && e.start_us < b && e.end_us() > a)
        })
        .count();
    let idle_n = naive.engine(EngineKind::MME).idle_fraction;
    let idle_l = look.engine(EngineKind::MME).idle_fraction;
    outcome(
        overlapping >= 1 && look.makespan_ms < naive.makespan_ms && idle_l < idle_n,
        format!(
            "{overlapping} naive MME gaps overlap TPC exp; makespan {:.2} -> {:.2} ms, MME idle {idle_n:.3} -> {idle_l:.3}",
            naive.makespan_ms, look.makespan_ms
        ),
    )
}

fn criterion_5(params: &CostParams) -> Outcome {
    let t0 = Instant::now();
    let exponent = |variant, build: fn(&AttentionConfig) -> Result<Graph, _>| {
        let pts: Vec<(f64, f64)> = [512, 1024, 2048, 4096, 8192]
            .iter()
            .map(|&n| {
                let mut cfg = AttentionConfig::profiled(variant);
                cfg.seq_len = n;
                let g = build(&cfg).unwrap();
                (n as f64, run(params, &g, ScheduleMode::Lookahead).1.makespan())
            })
            .collect();
        fit_scaling_exponent(&pts).unwrap()
    };
    let soft = exponent(AttentionVariant::Softmax, build_softmax_attention);
    let lin = exponent(AttentionVariant::LinearElu, build_linear_attention);
    let elapsed = t0.elapsed();
    outcome(
        (1.8..=2.2).contains(&soft) && (0.8..=1.2).contains(&lin) && elapsed < Duration::from_secs(30),
        format!("exponents softmax {soft:.3}, linear {lin:.3}; {elapsed:.2?}"),
    )
}

fn criterion_6(params: &CostParams) -> Outcome {
    let cfg = AttentionConfig::profiled(AttentionVariant::Softmax);
    let span = |a| {
        let g = build_activation_bench(a, &cfg).unwrap();
        run(params, &g, ScheduleMode::Lookahead).2.makespan_ms
    };
    let relu = span(Activation::Relu);
    let leaky = span(Activation::LeakyRelu);
    let gelu = span(Activation::Gelu);
    let glu = span(Activation::Glu);
    let close = |a: f64, b: f64| (a - b).abs() <= 0.03 * a.min(b);
    let excess = glu / gelu - 1.0;
    outcome(
        close(relu, leaky) && close(relu, gelu) && close(leaky, gelu) && (0.05..=0.15).contains(&excess),
        format!(
            "relu {relu:.2}, leaky {leaky:.2}, gelu {gelu:.2}, glu {glu:.2} ms (+{:.1}%)",
            excess * 100.0
        ),
    )
}

fn criterion_7(params: &CostParams) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for model in [LmModel::GptStyle, LmModel::BertStyle] {
        let g = build_lm_stack(&LMConfig::profiled(model)).unwrap();
        let (_, _, r) = run(params, &g, ScheduleMode::Lookahead);
        let mme = r.engine(EngineKind::MME);
        let tpc = r.engine(EngineKind::TPC);
        pass &= tpc.busy_ms > mme.busy_ms && !mme.gaps.is_empty();
        parts.push(format!(
            "{}: TPC busy {:.1} ms vs MME busy {:.1} ms, {} MME gaps",
            model.name(),
            tpc.busy_ms,
            mme.busy_ms,
            mme.gaps.len()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn random_dag(rng: &mut ChaCha8Rng) -> Vec<Task> {
    let n = rng.gen_range(1..=8);
    (0..n)
        .map(|i| {
            let engine = EngineKind::ALL[rng.gen_range(0..3)];
            let duration = if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen_range(1e-6..1e-3)
            };
            let preds = (0..i).filter(|_| rng.gen_bool(0.3)).collect();
            Task::new(i, engine, duration, preds)
        })
        .collect()
}

const REL_TOL: f64 = 1e-12;

fn criterion_8() -> Outcome {
    let mut held = 0;
    let mut valid = 0;
    for seed in 0..200u64 {
        let tasks = random_dag(&mut ChaCha8Rng::seed_from_u64(seed));
        let naive = schedule_tasks(&tasks, ScheduleMode::Naive).unwrap();
        let look = schedule_tasks(&tasks, ScheduleMode::Lookahead).unwrap();
        let best = brute_force_tasks(&tasks).unwrap();
        let (n, l) = (naive.makespan(), look.makespan());
        if best <= l * (1.0 + REL_TOL) && l <= n * (1.0 + REL_TOL) {
            held += 1;
        }
        if naive.validate().is_ok() && look.validate().is_ok() {
            valid += 1;
        }
    }
    outcome(
        held == 200 && valid == 200,
        format!("sandwich held on {held}/200 DAGs, {valid}/200 timeline pairs valid"),
    )
}

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

/// A float that counts every arithmetic operation applied to it.
#[derive(Clone, Copy)]
struct Counted(f64);

fn tick() {
    OPS.with(|c| c.set(c.get() + 1));
}

macro_rules! counted_op {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr for Counted {
            type Output = Counted;
            fn $f(self, o: Counted) -> Counted {
                tick();
                Counted(self.0 $op o.0)
            }
        }
    };
}
counted_op!(Add, add, +);
counted_op!(Sub, sub, -);
counted_op!(Mul, mul, *);
counted_op!(Div, div, /);

impl Counted {
    fn exp(self) -> Counted {
        tick();
        Counted(self.0.exp())
    }
    fn tanh(self) -> Counted {
        tick();
        Counted(self.0.tanh())
    }
    fn max(self, o: Counted) -> Counted {
        tick();
        Counted(self.0.max(o.0))
    }
    /// Branch select; free.
    fn positive_or(self, other: Counted) -> Counted {
        if self.0 > 0.0 {
            self
        } else {
            other
        }
    }
}

fn k(x: f64) -> Counted {
    Counted(x)
}

fn sigmoid(x: Counted) -> Counted {
    k(1.0) / (k(1.0) + (x * k(-1.0)).exp())
}

fn reference_activation(act: Activation, row: &[Counted]) -> Vec<Counted> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    match act {
        Activation::Relu => row.iter().map(|&x| x.max(k(0.0))).collect(),
        Activation::LeakyRelu => row.iter().map(|&x| x.max(k(0.01) * x)).collect(),
        Activation::EluPlusOne => row
            .iter()
            .map(|&x| x.positive_or(x.exp() - k(1.0)) + k(1.0))
            .collect(),
        Activation::Sigmoid => row.iter().map(|&x| sigmoid(x)).collect(),
        Activation::Gelu => row
            .iter()
            .map(|&x| x * (k(0.5) + k(0.5) * (x * (k(c) + k(c * 0.044715) * (x * x))).tanh()))
            .collect(),
        Activation::Glu => {
            let (a, b) = row.split_at(row.len() / 2);
            a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)).collect()
        }
    }
}

fn rows(shape: &[usize]) -> (usize, usize) {
    let len = *shape.last().unwrap();
    (shape.iter().product::<usize>() / len, len)
}

/// Runs the reference loop for `kind` over `data` and returns the count.
fn reference_count(kind: &OpKind, shape: &[usize], data: &[Counted]) -> u64 {
    OPS.with(|c| c.set(0));
    match kind {
        OpKind::Softmax => {
            let (_, len) = rows(shape);
            for row in data.chunks(len) {
                let e: Vec<Counted> = row.iter().map(|x| x.exp()).collect();
                let s = e[1..].iter().fold(e[0], |acc, &v| acc + v);
                let _: Vec<Counted> = e.iter().map(|&v| v / s).collect();
            }
        }
        OpKind::Reduction { axis } => {
            let outer: usize = shape[..*axis].iter().product();
            let len = shape[*axis];
            let inner: usize = shape[axis + 1..].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| data[(o * len + a) * inner + i];
                    let _ = (1..len).fold(at(0), |acc, a| acc + at(a));
                }
            }
        }
        OpKind::Activation(act) => {
            let (_, len) = rows(shape);
            for row in data.chunks(len) {
                let _ = reference_activation(*act, row);
            }
        }
        other => panic!("no reference loop for {other}"),
    }
    OPS.with(Cell::get)
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for _ in 0..50 {
        let rank = rng.gen_range(1..=4);
        let mut shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=6)).collect();
        let mut kinds = vec![OpKind::Softmax, OpKind::Reduction { axis: rng.gen_range(0..rank) }];
        kinds.extend(Activation::ALL.map(OpKind::Activation));
        for kind in kinds {
            let mut shape = shape.clone();
            if kind == OpKind::Activation(Activation::Glu) {
                *shape.last_mut().unwrap() *= 2;
            }
            let mut g = Graph::new();
            let x = g.add_tensor(&shape, DType::Fp32).unwrap();
            let id = g.add_op(kind.clone(), &[x], Attrs::new()).unwrap();
            let model = op_flops(g.node(id).unwrap(), &g).unwrap();
            let data: Vec<Counted> = (0..shape.iter().product::<usize>())
                .map(|_| Counted(rng.gen_range(-3.0..3.0)))
                .collect();
            let counted = reference_count(&kind, &shape, &data);
            checked += 1;
            if model != counted {
                mismatches.push(format!("{kind} {shape:?}: model {model} vs loop {counted}"));
            }
        }
        shape.clear();
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{checked} op/shape pairs match the counting reference exactly")
        } else {
            mismatches.join("; ")
        },
    )
}

fn trace_round_trips(tl: &Timeline) -> Result<(), String> {
    let text = to_chrome_trace_string(tl);
    let parsed = parse_chrome_trace(&text).map_err(|e| e.to_string())?;
    validate_trace(&parsed).map_err(|v| format!("{v:?}"))?;
    let micros = interval_micros(tl);
    if parsed.events.len() != micros.len() {
        return Err(format!("{} events for {} intervals", parsed.events.len(), micros.len()));
    }
    let total: f64 = micros.iter().map(|m| m.1).sum();
    if parsed.total_duration_us() != total {
        return Err(format!("total {} != {}", parsed.total_duration_us(), total));
    }
    Ok(())
}

fn criterion_10(params: &CostParams) -> Outcome {
    let mut timelines = Vec::new();
    let att = AttentionConfig::profiled(AttentionVariant::Softmax);
    let mut graphs = vec![
        build_softmax_attention(&att).unwrap(),
        build_linear_attention(&att.with_variant(AttentionVariant::LinearElu)).unwrap(),
        build_favor_attention(&att.with_variant(AttentionVariant::Favor)).unwrap(),
        build_lm_stack(&LMConfig::profiled(LmModel::GptStyle)).unwrap(),
    ];
    graphs.extend(AttentionVariant::ALL.map(layer));
    for g in &graphs {
        for mode in [ScheduleMode::Naive, ScheduleMode::Lookahead] {
            timelines.push(run(params, g, mode).1);
        }
    }
    for seed in 0..50u64 {
        let tasks = random_dag(&mut ChaCha8Rng::seed_from_u64(1000 + seed));
        timelines.push(schedule_tasks(&tasks, ScheduleMode::Lookahead).unwrap());
    }
    let failures: Vec<String> = timelines
        .iter()
        .enumerate()
        .filter_map(|(i, tl)| trace_round_trips(tl).err().map(|e| format!("#{i}: {e}")))
        .collect();
    outcome(
        failures.is_empty(),
        format!(
            "{}/{} traces parse, validate and round-trip exactly{}",
            timelines.len() - failures.len(),
            timelines.len(),
            if failures.is_empty() { String::new() } else { format!(" ({})", failures.join("; ")) }
        ),
    )
}

fn main() {
    let params = default_params();
    let criteria: Vec<(u32, Box<dyn Fn() -> Outcome>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(|| criterion_2(&params))),
        (3, Box::new(|| criterion_3(&params))),
        (4, Box::new(|| criterion_4(&params))),
        (5, Box::new(|| criterion_5(&params))),
        (6, Box::new(|| criterion_6(&params))),
        (7, Box::new(|| criterion_7(&params))),
        (8, Box::new(criterion_8)),
        (9, Box::new(criterion_9)),
        (10, Box::new(|| criterion_10(&params))),
    ];
    let mut failed = Vec::new();
    for (n, check) in &criteria {
        let o = check();
        println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(*n);
        }
    }
    println!(
        "acceptance: {} passed, {} failed",
        criteria.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
