//! `hetsim` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 internal
//! invariant violation.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use hetsim::calibration::{
    fit_glu_penalty, fit_params, parse_table, predicted_speedup, tune_attention_multipliers,
    AttentionTargets, GLU_OVER_GELU_TARGET,
};
use hetsim::cost::CostParams;
use hetsim::mapping::{EngineKind, MappingTable};
use hetsim::report::fit_scaling_exponent;
use hetsim::scenario::{run_scenario, ScenarioConfig, ScenarioError, ScenarioRun};
use hetsim::scheduler::ScheduleMode;
use hetsim::trace::{parse_chrome_trace, to_chrome_trace_string, validate_trace};
use hetsim::workloads::{AttentionConfig, AttentionVariant};

const PARAMS_ENV: &str = "HETSIM_DEFAULT_PARAMS";

#[derive(Parser)]
#[command(name = "hetsim", version, about = "MME/TPC accelerator performance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit cost parameters from a measurement table
    Calibrate(CalibrateArgs),
    /// Simulate one scenario and report utilization
    Simulate(SimArgs),
    /// Simulate several scenarios and tabulate makespan ratios
    Compare(CompareArgs),
    /// Simulate a scenario across values of one field
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// CSV with header size,t_mme_ms,f_mme,t_tpc_ms,f_tpc
    #[arg(long)]
    table: PathBuf,
    /// Where to write the params JSON
    #[arg(long)]
    out: PathBuf,
    /// Also tune attention multipliers and the GLU penalty
    #[arg(long)]
    tune_attention: bool,
    /// JSON summary of the fit
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// Cost params JSON (overrides the scenario's and $HETSIM_DEFAULT_PARAMS)
    #[arg(long)]
    params: Option<PathBuf>,
    /// Scheduling mode: lookahead (default) or naive
    #[arg(long)]
    mode: Option<ScheduleMode>,
    /// Chrome trace output path
    #[arg(long)]
    out_trace: Option<PathBuf>,
    /// JSON report output path
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Override a scenario field, e.g. --set seq_len=4096
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario JSON
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    shared: Shared,
    /// Print the report as JSON instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Scenario JSON; repeat to compare several files
    #[arg(long)]
    config: Vec<PathBuf>,
    /// Vary one field of the (single) base scenario: KEY=V1,V2,...
    #[arg(long, value_name = "KEY=V1,V2,...")]
    vary: Option<String>,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct SweepArgs {
    /// Base scenario JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field and values: KEY=V1,V2,...
    #[arg(long, value_name = "KEY=V1,V2,...")]
    axis: String,
    /// CSV output path
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[command(flatten)]
    shared: Shared,
}

enum Failure {
    Usage(String),
    Internal(String),
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Invariant(_) => Failure::Internal(e.to_string()),
        other => Failure::Usage(other.to_string()),
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// `trace.json` becomes `trace.3.json` for scenario 3.
fn indexed_path(path: &Path, index: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{index}"),
    };
    path.with_file_name(name)
}

fn write_traces(path: Option<&Path>, traces: &[String]) -> CliResult<()> {
    if let Some(path) = path {
        for (i, text) in traces.iter().enumerate() {
            write_atomic(&indexed_path(path, i), text)?;
        }
    }
    Ok(())
}

fn split_assignment(spec: &str) -> CliResult<(&str, &str)> {
    spec.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| usage(format!("expected KEY=VALUE, got `{spec}`")))
}

fn load_scenario(path: Option<&Path>, shared: &Shared) -> CliResult<(ScenarioConfig, Option<PathBuf>)> {
    let (mut cfg, base_dir) = match path {
        Some(p) => {
            let cfg = ScenarioConfig::from_json(&read(p)?)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?;
            (cfg, p.parent().map(Path::to_path_buf))
        }
        None => (ScenarioConfig::default(), None),
    };
    for spec in &shared.set {
        let (k, v) = split_assignment(spec)?;
        cfg = cfg.with_override(k, v).map_err(scenario_failure)?;
    }
    Ok((cfg, base_dir))
}

fn resolve(base: &Option<PathBuf>, p: &Path) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

/// --params, then the scenario's `params`, then $HETSIM_DEFAULT_PARAMS,
/// then the bundled defaults.
fn load_params(shared: &Shared, cfg: &ScenarioConfig, base: &Option<PathBuf>) -> CliResult<CostParams> {
    let path = shared
        .params
        .clone()
        .or_else(|| cfg.params.as_ref().map(|p| resolve(base, p)))
        .or_else(|| std::env::var_os(PARAMS_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    match path {
        Some(p) => CostParams::from_json(&read(&p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => Ok(CostParams::default()),
    }
}

fn load_mapping(cfg: &ScenarioConfig, base: &Option<PathBuf>) -> CliResult<MappingTable> {
    match &cfg.mapping {
        Some(p) => {
            let p = resolve(base, p);
            MappingTable::from_json(&read(&p)?).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
        None => Ok(MappingTable::default()),
    }
}

fn mode_for(shared: &Shared, cfg: &ScenarioConfig) -> ScheduleMode {
    shared.mode.or(cfg.mode).unwrap_or_default()
}

/// Emits the trace and re-checks it; a trace that fails its own validator
/// is an internal error.
fn checked_trace(run: &ScenarioRun) -> CliResult<String> {
    let text = to_chrome_trace_string(&run.timeline);
    let parsed = parse_chrome_trace(&text).map_err(|e| Failure::Internal(format!("emitted trace: {e}")))?;
    validate_trace(&parsed).map_err(|v| Failure::Internal(format!("emitted trace overlaps: {v:?}")))?;
    if parsed.events.len() != run.timeline.intervals.len() {
        return Err(Failure::Internal("emitted trace lost events".into()));
    }
    Ok(text)
}

struct Prepared {
    cfg: ScenarioConfig,
    params: CostParams,
    mapping: MappingTable,
    mode: ScheduleMode,
}

fn prepare(cfg: ScenarioConfig, base: &Option<PathBuf>, shared: &Shared) -> CliResult<Prepared> {
    cfg.workload().map_err(scenario_failure)?;
    Ok(Prepared {
        params: load_params(shared, &cfg, base)?,
        mapping: load_mapping(&cfg, base)?,
        mode: mode_for(shared, &cfg),
        cfg,
    })
}

fn execute(p: &Prepared) -> CliResult<ScenarioRun> {
    run_scenario(&p.cfg, &p.params, &p.mapping, p.mode).map_err(scenario_failure)
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult<()> {
    let table = parse_table(&read(&args.table)?).map_err(|e| usage(format!("{}: {e}", args.table.display())))?;
    let mut params = fit_params(&table).map_err(|e| usage(e.to_string()))?;
    println!("mme_peak_tflops: {}", params.mme_peak_tflops);
    println!("tpc_peak_tflops: {}", params.tpc_peak_tflops);
    println!("launch_overhead_s: {:e}", params.launch_overhead.mme);
    println!("{:>6} {:>10} {:>10}", "size", "measured", "predicted");
    let mut rows = Vec::new();
    for row in &table.rows {
        let predicted = predicted_speedup(&params, row.size).map_err(|e| Failure::Internal(e.to_string()))?;
        println!("{:>6} {:>10.2} {:>10.2}", row.size, row.speedup(), predicted);
        rows.push(json!({"size": row.size, "measured_speedup": row.speedup(), "predicted_speedup": predicted}));
    }
    if args.tune_attention {
        params = tune_attention_multipliers(&params, AttentionTargets::default()).map_err(|e| usage(e.to_string()))?;
        params = fit_glu_penalty(
            &params,
            &AttentionConfig::profiled(AttentionVariant::Softmax),
            GLU_OVER_GELU_TARGET,
        )
        .map_err(|e| usage(e.to_string()))?;
        let m = &params.class_multipliers;
        println!("exp_mul: {}", m.exp_mul);
        println!("reduction_mul: {}", m.reduction_mul);
        println!("glu_compile_penalty_s: {}", params.glu_compile_penalty);
        if let Some(t) = &params.tuning {
            println!("tuned_on: {}", t.workload);
            println!(
                "softmax_over_linear: {:.3} (target {})",
                t.softmax_over_linear.achieved, t.softmax_over_linear.target
            );
            println!(
                "softmax_over_favor: {:.3} (target {})",
                t.softmax_over_favor.achieved, t.softmax_over_favor.target
            );
            if let Some(g) = &t.glu_over_gelu {
                println!("glu_over_gelu: {:.4} (target {:.4})", g.achieved, g.target);
            }
        }
    }
    write_atomic(&args.out, &(params.to_json() + "\n"))?;
    if let Some(path) = &args.out_report {
        let doc = json!({"table": args.table, "speedups": rows, "params": params});
        write_atomic(path, &(serde_json::to_string_pretty(&doc).expect("serializes") + "\n"))?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimArgs) -> CliResult<()> {
    let (cfg, base) = load_scenario(args.config.as_deref(), &args.shared)?;
    let out_trace = args.shared.out_trace.clone().or_else(|| cfg.out_trace.as_ref().map(|p| resolve(&base, p)));
    let out_report = args.shared.out_report.clone().or_else(|| cfg.out_report.as_ref().map(|p| resolve(&base, p)));
    let prepared = prepare(cfg, &base, &args.shared)?;
    let run = execute(&prepared)?;
    let trace = checked_trace(&run)?;
    if let Some(p) = out_trace {
        write_atomic(&p, &trace)?;
    }
    if let Some(p) = out_report {
        write_atomic(&p, &(run.report.to_json() + "\n"))?;
    }
    if args.json {
        println!("{}", run.report.to_json());
    } else {
        print!("{}", run.report.to_table());
    }
    Ok(())
}

fn variants(values: &str) -> Vec<&str> {
    values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect()
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let mut scenarios: Vec<(ScenarioConfig, Option<PathBuf>)> = Vec::new();
    match (&args.vary, args.config.len()) {
        (Some(spec), 0 | 1) => {
            let (base, dir) = load_scenario(args.config.first().map(PathBuf::as_path), &args.shared)?;
            let (key, values) = split_assignment(spec)?;
            for v in variants(values) {
                let cfg = base.with_override(key, v).map_err(scenario_failure)?;
                scenarios.push((cfg, dir.clone()));
            }
        }
        (Some(_), _) => return Err(usage("--vary takes a single base --config")),
        (None, _) => {
            for path in &args.config {
                scenarios.push(load_scenario(Some(path), &args.shared)?);
            }
        }
    }
    if scenarios.len() < 2 {
        return Err(usage("compare needs at least two scenarios (repeat --config or use --vary)"));
    }
    let prepared = scenarios
        .into_iter()
        .map(|(cfg, dir)| prepare(cfg, &dir, &args.shared))
        .collect::<CliResult<Vec<_>>>()?;
    let runs = prepared.par_iter().map(execute).collect::<Vec<_>>();
    let runs = runs.into_iter().collect::<CliResult<Vec<_>>>()?;
    let traces = runs.iter().map(checked_trace).collect::<CliResult<Vec<_>>>()?;
    write_traces(args.shared.out_trace.as_deref(), &traces)?;

    let first = runs[0].report.makespan_ms;
    let mut rows = Vec::new();
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<32} {:>14} {:>10} {:>10}",
        "scenario", "makespan_ms", "speedup", "mme_idle"
    );
    for (p, run) in prepared.iter().zip(&runs) {
        let makespan = run.report.makespan_ms;
        let speedup = first / makespan;
        let idle = run.report.engine(EngineKind::MME).idle_fraction;
        let _ = writeln!(
            table,
            "{:<32} {:>14.2} {:>10.3} {:>10.3}",
            p.cfg.label(),
            makespan,
            speedup,
            idle
        );
        rows.push(json!({
            "scenario": p.cfg.label(),
            "config": p.cfg.to_value(),
            "makespan_ms": makespan,
            "speedup_vs_first": speedup,
            "report": run.report,
        }));
    }
    print!("{table}");
    if let Some(path) = &args.shared.out_report {
        let doc = serde_json::to_string_pretty(&json!({ "scenarios": rows })).expect("serializes");
        write_atomic(path, &(doc + "\n"))?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let (base, dir) = load_scenario(args.config.as_deref(), &args.shared)?;
    let (key, values) = split_assignment(&args.axis)?;
    let values = variants(values);
    if values.is_empty() {
        return Err(usage("sweep axis has no values"));
    }
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(ns) = &numeric {
        // refuse an unfittable axis before simulating anything
        let probe: Vec<(f64, f64)> = ns.iter().map(|&n| (n, 1.0)).collect();
        fit_scaling_exponent(&probe).map_err(|e| usage(format!("sweep axis `{key}`: {e}")))?;
    }
    let prepared = values
        .iter()
        .map(|v| {
            let cfg = base.with_override(key, v).map_err(scenario_failure)?;
            prepare(cfg, &dir, &args.shared)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let runs = prepared.par_iter().map(execute).collect::<Vec<_>>();
    let runs = runs.into_iter().collect::<CliResult<Vec<_>>>()?;
    let traces = runs.iter().map(checked_trace).collect::<CliResult<Vec<_>>>()?;

    let mut csv = format!("index,{key},makespan_ms,mme_busy_ms,tpc_busy_ms,dma_busy_ms,mme_idle_fraction\n");
    println!("{:>6} {:>12} {:>14}", "index", key, "makespan_ms");
    let mut points = Vec::new();
    for (i, (v, run)) in values.iter().zip(&runs).enumerate() {
        let r = &run.report;
        let busy = |e: EngineKind| r.engine(e).busy_ms;
        println!("{:>6} {:>12} {:>14.2}", i, v, r.makespan_ms);
        let _ = writeln!(
            csv,
            "{i},{v},{},{},{},{},{}",
            r.makespan_ms,
            busy(EngineKind::MME),
            busy(EngineKind::TPC),
            busy(EngineKind::DMA),
            r.engine(EngineKind::MME).idle_fraction
        );
        if let Some(ns) = &numeric {
            points.push((ns[i], r.makespan_ms / 1e3));
        }
    }
    if let Some(path) = &args.out_csv {
        write_atomic(path, &csv)?;
    }
    if let Some(path) = &args.shared.out_report {
        let reports: Vec<_> = runs.iter().map(|r| &r.report).collect();
        let doc = serde_json::to_string_pretty(&json!({ "axis": key, "values": values, "reports": reports }))
            .expect("serializes");
        write_atomic(path, &(doc + "\n"))?;
    }
    write_traces(args.shared.out_trace.as_deref(), &traces)?;
    if numeric.is_none() {
        eprintln!("note: `{key}` is not numeric, no exponent fitted");
        return Ok(());
    }
    let exponent = fit_scaling_exponent(&points).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("exponent: {exponent:.4}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
