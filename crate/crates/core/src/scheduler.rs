//! Placement of cost-annotated ops onto the MME, TPC and DMA lanes.
//!
//! Two modes are provided. [`ScheduleMode::Naive`] runs one op at a time in
//! program order, which is what an eager compiler that misses independent
//! chains ends up doing. [`ScheduleMode::Lookahead`] is event-driven list
//! scheduling with critical-path priorities and cross-engine overlap.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{op_cost, CostError, CostParams, OpClass};
use crate::graph::{attrs, Graph, NodeId, OpKind, OpNode, TensorId, Violation};
use crate::mapping::{EngineKind, MappingTable};

/// Length given to zero-duration intervals so they remain visible in traces.
/// Never counted as busy time.
pub const EPSILON: f64 = 1e-12;

/// Largest graph accepted by [`brute_force_optimal`].
pub const BRUTE_FORCE_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Naive,
    #[default]
    Lookahead,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Naive => "naive",
            ScheduleMode::Lookahead => "lookahead",
        })
    }
}

impl std::str::FromStr for ScheduleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(ScheduleMode::Naive),
            "lookahead" => Ok(ScheduleMode::Lookahead),
            other => Err(format!("unknown mode `{other}` (expected naive or lookahead)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("graph is not schedulable: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),
    #[error("node {0} could not be scheduled")]
    UnscheduledNode(NodeId),
    #[error("brute force is limited to {limit} nodes, graph has {nodes}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("task {task} depends on task {pred}, which does not precede it")]
    BadTaskOrder { task: usize, pred: usize },
}

/// A unit of work for the scheduler: one IR node with its engine and cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub node: NodeId,
    pub engine: EngineKind,
    /// Predicted duration in seconds (may be zero).
    pub duration: f64,
    /// Indices of predecessor tasks; each must be smaller than this task's.
    pub preds: Vec<usize>,
    pub label: String,
    pub class: Option<OpClass>,
    pub flops: u64,
    pub bytes: u64,
}

impl Task {
    /// Bare task, used for synthetic DAGs.
    pub fn new(index: usize, engine: EngineKind, duration: f64, preds: Vec<usize>) -> Task {
        Task {
            node: NodeId(index as u32),
            engine,
            duration,
            preds,
            label: format!("task{index}"),
            class: None,
            flops: 0,
            bytes: 0,
        }
    }

    fn span(&self) -> f64 {
        if self.duration > 0.0 {
            self.duration
        } else {
            EPSILON
        }
    }
}

/// One scheduled op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub node: NodeId,
    pub engine: EngineKind,
    pub start: f64,
    pub end: f64,
    /// Predicted duration; zero for ops stretched to [`EPSILON`].
    pub work: f64,
    pub label: String,
    pub class: Option<OpClass>,
    pub flops: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    pub mode: ScheduleMode,
    /// Sorted by start time, then lane, then node id.
    pub intervals: Vec<Interval>,
    /// Dependency edges `(from, to)` between scheduled nodes.
    pub edges: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TimelineViolation {
    EmptyInterval { node: NodeId },
    Overlap { engine: EngineKind, first: NodeId, second: NodeId },
    DependencyOrder { from: NodeId, to: NodeId },
    Duplicate { node: NodeId },
    Missing { node: NodeId },
    UnknownEdgeEndpoint { node: NodeId },
}

impl Timeline {
    pub fn makespan(&self) -> f64 {
        makespan(self)
    }

    pub fn lane(&self, engine: EngineKind) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(move |iv| iv.engine == engine)
    }

    /// Busy seconds on `engine`, excluding zero-duration ops.
    pub fn busy_time(&self, engine: EngineKind) -> f64 {
        self.lane(engine).map(|iv| iv.work).sum()
    }

    pub fn start_time(&self) -> f64 {
        self.intervals
            .iter()
            .map(|iv| iv.start)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn interval(&self, node: NodeId) -> Option<&Interval> {
        self.intervals.iter().find(|iv| iv.node == node)
    }

    /// Checks lane exclusivity, dependency order and that each node appears
    /// once.
    pub fn validate(&self) -> Result<(), Vec<TimelineViolation>> {
        let mut out = Vec::new();
        let mut by_node: HashMap<NodeId, &Interval> = HashMap::new();
        for iv in &self.intervals {
            // also catches NaN
            if iv.end.partial_cmp(&iv.start) != Some(std::cmp::Ordering::Greater) {
                out.push(TimelineViolation::EmptyInterval { node: iv.node });
            }
            if by_node.insert(iv.node, iv).is_some() {
                out.push(TimelineViolation::Duplicate { node: iv.node });
            }
        }
        for engine in EngineKind::ALL {
            let mut lane: Vec<&Interval> = self.lane(engine).collect();
            lane.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.node.cmp(&b.node)));
            for w in lane.windows(2) {
                if w[1].start < w[0].end {
                    out.push(TimelineViolation::Overlap {
                        engine,
                        first: w[0].node,
                        second: w[1].node,
                    });
                }
            }
        }
        for &(from, to) in &self.edges {
            match (by_node.get(&from), by_node.get(&to)) {
                (Some(a), Some(b)) => {
                    if b.start < a.end {
                        out.push(TimelineViolation::DependencyOrder { from, to });
                    }
                }
                (None, _) => out.push(TimelineViolation::UnknownEdgeEndpoint { node: from }),
                (_, None) => out.push(TimelineViolation::UnknownEdgeEndpoint { node: to }),
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// [`Timeline::validate`] plus completeness against the scheduled graph.
    pub fn validate_against(&self, graph: &Graph) -> Result<(), Vec<TimelineViolation>> {
        let mut out = self.validate().err().unwrap_or_default();
        let present: HashSet<NodeId> = self.intervals.iter().map(|iv| iv.node).collect();
        for n in graph.nodes() {
            if !present.contains(&n.id) {
                out.push(TimelineViolation::Missing { node: n.id });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

/// End-to-end length: last end minus first start; zero when empty.
pub fn makespan(timeline: &Timeline) -> f64 {
    if timeline.intervals.is_empty() {
        return 0.0;
    }
    let end = timeline
        .intervals
        .iter()
        .map(|iv| iv.end)
        .fold(f64::NEG_INFINITY, f64::max);
    end - timeline.start_time()
}

/// `1 - busy / makespan` for `engine`; 1 when the engine has no ops.
pub fn idle_fraction(timeline: &Timeline, engine: EngineKind) -> f64 {
    if timeline.lane(engine).next().is_none() {
        return 1.0;
    }
    let span = makespan(timeline);
    if span <= 0.0 {
        return 1.0;
    }
    (1.0 - timeline.busy_time(engine) / span).clamp(0.0, 1.0)
}

fn is_view(kind: &OpKind) -> bool {
    matches!(kind, OpKind::Reshape { .. })
}

/// Engine of every node in program order. Views run wherever their input
/// was produced; everything else follows the mapping table.
pub fn node_engines(graph: &Graph, mapping: &MappingTable) -> Vec<EngineKind> {
    let mut engines: Vec<EngineKind> = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        let inherited = if is_view(&node.kind) {
            node.inputs
                .first()
                .and_then(|t| graph.producer_index(*t))
                .filter(|&p| p < engines.len())
                .map(|p| engines[p])
        } else {
            None
        };
        engines.push(inherited.unwrap_or_else(|| mapping.assign_engine(&node.kind)));
    }
    engines
}

/// Inserts a DMA `MemCopy` on every producer-to-consumer edge that crosses
/// between the MME and the TPC. A tensor read by several consumers on the
/// same engine is copied once. Graphs without such edges come back unchanged.
pub fn insert_transfers(graph: &Graph, mapping: &MappingTable) -> Graph {
    let engines = node_engines(graph, mapping);
    let mut needed: Vec<Vec<(usize, TensorId)>> = vec![Vec::new(); graph.len()];
    let mut any = false;
    for (i, node) in graph.nodes().iter().enumerate() {
        let dst = engines[i];
        if !dst.is_compute() || is_view(&node.kind) {
            continue;
        }
        for (slot, t) in node.inputs.iter().enumerate() {
            if let Some(p) = graph.producer_index(*t) {
                let src = engines[p];
                if src.is_compute() && src != dst {
                    needed[i].push((slot, *t));
                    any = true;
                }
            }
        }
    }
    if !any {
        return graph.clone();
    }

    let mut tensors: BTreeMap<TensorId, _> = graph
        .tensors()
        .map(|(id, spec)| (id, spec.clone()))
        .collect();
    let mut next_tensor = tensors.keys().next_back().map_or(0, |t| t.0 + 1);
    let mut copies: HashMap<(TensorId, EngineKind), TensorId> = HashMap::new();
    let mut nodes: Vec<OpNode> = Vec::new();

    for (i, node) in graph.nodes().iter().enumerate() {
        let mut node = node.clone();
        for &(slot, t) in &needed[i] {
            let dst = engines[i];
            let copied = *copies.entry((t, dst)).or_insert_with(|| {
                let out = TensorId(next_tensor);
                next_tensor += 1;
                tensors.insert(out, tensors[&t].clone());
                nodes.push(OpNode {
                    id: NodeId(0),
                    kind: OpKind::MemCopy,
                    attrs: attrs([("name", format!("copy {t} to {dst}").as_str().into())]),
                    inputs: vec![t],
                    output: out,
                });
                out
            });
            node.inputs[slot] = copied;
        }
        nodes.push(node);
    }
    for (i, n) in nodes.iter_mut().enumerate() {
        n.id = NodeId(i as u32);
    }
    Graph::from_parts(tensors, nodes)
}

/// Costs every node and turns the graph into scheduler tasks.
pub fn build_tasks(
    graph: &Graph,
    mapping: &MappingTable,
    params: &CostParams,
) -> Result<Vec<Task>, ScheduleError> {
    graph.validate().map_err(ScheduleError::InvalidGraph)?;
    let engines = node_engines(graph, mapping);
    graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let cost = op_cost(node, graph, engines[i], params)?;
            Ok(Task {
                node: node.id,
                engine: engines[i],
                duration: cost.duration,
                preds: graph.predecessors(i),
                label: node.kind.to_string(),
                class: Some(OpClass::of(&node.kind)),
                flops: cost.flops,
                bytes: cost.bytes_moved,
            })
        })
        .collect()
}

/// Schedules a validated (and usually transfer-augmented) graph.
pub fn schedule(
    graph: &Graph,
    mapping: &MappingTable,
    params: &CostParams,
    mode: ScheduleMode,
) -> Result<Timeline, ScheduleError> {
    let tasks = build_tasks(graph, mapping, params)?;
    schedule_tasks(&tasks, mode)
}

/// Inserts transfers and schedules; returns the augmented graph with its
/// timeline.
pub fn simulate(
    graph: &Graph,
    mapping: &MappingTable,
    params: &CostParams,
    mode: ScheduleMode,
) -> Result<(Graph, Timeline), ScheduleError> {
    let augmented = insert_transfers(graph, mapping);
    let timeline = schedule(&augmented, mapping, params, mode)?;
    Ok((augmented, timeline))
}

fn check_tasks(tasks: &[Task]) -> Result<(), ScheduleError> {
    for (i, t) in tasks.iter().enumerate() {
        if let Some(&p) = t.preds.iter().find(|&&p| p >= i) {
            return Err(ScheduleError::BadTaskOrder { task: i, pred: p });
        }
    }
    Ok(())
}

fn successors(tasks: &[Task]) -> Vec<Vec<usize>> {
    let mut succs = vec![Vec::new(); tasks.len()];
    for (i, t) in tasks.iter().enumerate() {
        for &p in &t.preds {
            succs[p].push(i);
        }
    }
    succs
}

/// Longest path to any sink, counting the task itself.
pub fn critical_path_lengths(tasks: &[Task]) -> Vec<f64> {
    let succs = successors(tasks);
    let mut cp = vec![0.0; tasks.len()];
    for i in (0..tasks.len()).rev() {
        let tail = succs[i].iter().map(|&s| cp[s]).fold(0.0, f64::max);
        cp[i] = tasks[i].span() + tail;
    }
    cp
}

fn timeline_from(tasks: &[Task], mode: ScheduleMode, placed: &[(f64, f64)]) -> Timeline {
    let mut intervals: Vec<Interval> = tasks
        .iter()
        .zip(placed)
        .map(|(t, &(start, end))| Interval {
            node: t.node,
            engine: t.engine,
            start,
            end,
            work: t.duration.max(0.0),
            label: t.label.clone(),
            class: t.class,
            flops: t.flops,
            bytes: t.bytes,
        })
        .collect();
    intervals.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.engine.index().cmp(&b.engine.index()))
            .then(a.node.cmp(&b.node))
    });
    let edges = tasks
        .iter()
        .flat_map(|t| t.preds.iter().map(move |&p| (tasks[p].node, t.node)))
        .collect();
    Timeline {
        mode,
        intervals,
        edges,
    }
}

/// Schedules tasks given in a topological order.
pub fn schedule_tasks(tasks: &[Task], mode: ScheduleMode) -> Result<Timeline, ScheduleError> {
    check_tasks(tasks)?;
    let placed = match mode {
        ScheduleMode::Naive => {
            let mut t = 0.0;
            tasks
                .iter()
                .map(|task| {
                    let start = t;
                    t = start + task.span();
                    (start, t)
                })
                .collect()
        }
        ScheduleMode::Lookahead => list_schedule(tasks)?,
    };
    Ok(timeline_from(tasks, mode, &placed))
}

fn list_schedule(tasks: &[Task]) -> Result<Vec<(f64, f64)>, ScheduleError> {
    let n = tasks.len();
    let priority = critical_path_lengths(tasks);
    let succs = successors(tasks);
    let mut waiting: Vec<usize> = tasks.iter().map(|t| t.preds.len()).collect();
    let mut placed: Vec<Option<(f64, f64)>> = vec![None; n];
    let mut ready: [Vec<usize>; 3] = Default::default();
    let mut lane_free = [0.0f64; 3];
    // (end time, task) of started but unfinished tasks
    let mut running: Vec<(f64, usize)> = Vec::new();

    for (i, t) in tasks.iter().enumerate() {
        if t.preds.is_empty() {
            ready[t.engine.index()].push(i);
        }
    }

    let mut now = 0.0f64;
    let mut started = 0;
    while started < n {
        for engine in EngineKind::ALL {
            let lane = engine.index();
            if lane_free[lane] > now || ready[lane].is_empty() {
                continue;
            }
            let (pos, &pick) = ready[lane]
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| priority[a].total_cmp(&priority[b]).then(b.cmp(&a)))
                .expect("non-empty");
            ready[lane].swap_remove(pos);
            let end = now + tasks[pick].span();
            placed[pick] = Some((now, end));
            lane_free[lane] = end;
            running.push((end, pick));
            started += 1;
        }

        let Some(next) = running.iter().map(|r| r.0).reduce(f64::min) else {
            break;
        };
        now = next;
        let mut finished: Vec<usize> = running
            .iter()
            .filter(|r| r.0 <= now)
            .map(|r| r.1)
            .collect();
        finished.sort_unstable();
        running.retain(|r| r.0 > now);
        for f in finished {
            for &s in &succs[f] {
                waiting[s] -= 1;
                if waiting[s] == 0 {
                    ready[tasks[s].engine.index()].push(s);
                }
            }
        }
    }

    placed
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or(ScheduleError::UnscheduledNode(tasks[i].node)))
        .collect()
}

/// Exact minimum makespan over all topological orders, each placed greedily
/// at its earliest feasible start. Exponential; test oracle only.
pub fn brute_force_optimal(
    graph: &Graph,
    mapping: &MappingTable,
    params: &CostParams,
) -> Result<f64, ScheduleError> {
    if graph.len() > BRUTE_FORCE_LIMIT {
        return Err(ScheduleError::TooLarge {
            nodes: graph.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let tasks = build_tasks(graph, mapping, params)?;
    brute_force_tasks(&tasks)
}

pub fn brute_force_tasks(tasks: &[Task]) -> Result<f64, ScheduleError> {
    if tasks.len() > BRUTE_FORCE_LIMIT {
        return Err(ScheduleError::TooLarge {
            nodes: tasks.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    check_tasks(tasks)?;
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut search = Search {
        tasks,
        end: vec![f64::NAN; tasks.len()],
        done: vec![false; tasks.len()],
        best: f64::INFINITY,
    };
    search.run(0, [0.0; 3], 0.0);
    Ok(search.best)
}

struct Search<'a> {
    tasks: &'a [Task],
    end: Vec<f64>,
    done: Vec<bool>,
    best: f64,
}

impl Search<'_> {
    fn run(&mut self, placed: usize, lanes: [f64; 3], span: f64) {
        if span >= self.best {
            return;
        }
        if placed == self.tasks.len() {
            self.best = span;
            return;
        }
        for i in 0..self.tasks.len() {
            if self.done[i] || self.tasks[i].preds.iter().any(|&p| !self.done[p]) {
                continue;
            }
            let t = &self.tasks[i];
            let lane = t.engine.index();
            let ready = t.preds.iter().map(|&p| self.end[p]).fold(0.0, f64::max);
            let start = ready.max(lanes[lane]);
            let end = start + t.span();
            let mut next = lanes;
            next[lane] = end;
            self.done[i] = true;
            self.end[i] = end;
            self.run(placed + 1, next, span.max(end));
            self.done[i] = false;
        }
    }
}
