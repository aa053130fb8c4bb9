//! Batch harness: generate or load graphs, run the coloring programs on
//! either backend (or both, with an equivalence verdict), verify every
//! coloring independently, and emit machine-readable reports.
//!
//! Exit codes: 0 all checks passed, 2 a check failed, 3 an engine fault,
//! 4 bad arguments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cliquemr::cc::{check_lightweight, run_cc_traced, CcConfig, CcProgram};
use cliquemr::coloring::Coloring;
use cliquemr::graph::Graph;
use cliquemr::highdeg::{default_beta, HighDegOutcome, HighDegProgram};
use cliquemr::lowdeg::{LowDegOutcome, LowDegProgram};
use cliquemr::mr::MrConfig;
use cliquemr::sim::simulate;
use cliquemr::{NodeId, Word};

#[derive(Parser)]
#[command(
    name = "cliquemr",
    version,
    about = "Distributed graph-coloring simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on one graph and write reports.
    Run(RunArgs),
    /// Run a seed sweep and write an aggregate CSV.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Alg {
    Highdeg,
    Lowdeg,
    /// Dispatch on the maximum degree: at most beta^4 runs lowdeg.
    Auto,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Cc,
    Mr,
    Both,
}

#[derive(Args, Clone)]
struct GraphArgs {
    /// Node count for generated graphs.
    #[arg(long)]
    n: Option<u32>,
    /// Edge probability for generated graphs.
    #[arg(long)]
    p: Option<f64>,
    /// Cap on generated degrees (rejects edges at saturated endpoints).
    #[arg(long)]
    max_degree: Option<u32>,
    /// Read the graph from an edge-list file instead of generating.
    #[arg(long, conflicts_with_all = ["n", "p", "max_degree"])]
    input: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long, value_enum, default_value = "auto")]
    alg: Alg,
    #[arg(long, value_enum, default_value = "cc")]
    backend: Backend,
    /// Group-width parameter standing in for log n (default: ceil(log2 n)).
    #[arg(long)]
    beta: Option<u32>,
    /// Stage-1 iterations for the low-degree program.
    #[arg(long)]
    t_iters: Option<u32>,
    /// Per-machine memory exponent.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Edge-density exponent (default: measured from the edge count).
    #[arg(long)]
    c: Option<f64>,
    /// Rounds charged per routing invocation.
    #[arg(long, default_value_t = 2)]
    routing_const: u32,
    /// Routing capacity factor (words per node = factor * n).
    #[arg(long, default_value_t = 128)]
    route_factor: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Node counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<u32>,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long)]
    max_degree: Option<u32>,
    /// First seed (inclusive).
    #[arg(long, default_value_t = 0)]
    seed_from: u64,
    /// Last seed (exclusive).
    #[arg(long, default_value_t = 0)]
    seed_to: u64,
}

#[derive(Debug, Clone, Serialize)]
struct RunReport {
    algorithm: String,
    backend: String,
    n: u32,
    edge_prob: Option<f64>,
    seed: u64,
    delta: u32,
    beta: u32,
    eps: f64,
    c: f64,
    cc_rounds: Option<u32>,
    mr_rounds: Option<u32>,
    trials: Option<u64>,
    restarts: Option<u64>,
    colors_used: u64,
    max_color: u64,
    residual_edges: Option<u64>,
    max_igdeg: Option<u64>,
    components: Option<u64>,
    max_component: Option<u64>,
    peak_reducer_words: Option<u64>,
    lightweight_pass: Option<bool>,
    equivalence: Option<String>,
    proper: bool,
}

#[derive(Serialize)]
struct EquivalenceReport {
    r#match: bool,
    first_divergence: Option<(u32, NodeId)>,
}

#[derive(Serialize)]
struct ErrorReport {
    kind: &'static str,
    error: String,
}

enum RunFailure {
    Fault(String),
    CheckFailed(String),
}

struct RunResult {
    report: RunReport,
    coloring: Coloring,
    profile_jsonl: Option<String>,
    metrics_jsonl: Option<String>,
    equivalence: Option<EquivalenceReport>,
}

fn resolve_alg(alg: Alg, delta: u32, beta: u32) -> Alg {
    match alg {
        Alg::Auto => {
            let b4 = (beta as u64).pow(4);
            if (delta as u64) <= b4 {
                Alg::Lowdeg
            } else {
                Alg::Highdeg
            }
        }
        other => other,
    }
}

fn alg_name(alg: Alg) -> &'static str {
    match alg {
        Alg::Highdeg => "highdeg",
        Alg::Lowdeg => "lowdeg",
        Alg::Auto => "auto",
    }
}

fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Cc => "cc",
        Backend::Mr => "mr",
        Backend::Both => "both",
    }
}

fn execute_run(
    g: &Graph,
    edge_prob: Option<f64>,
    seed: u64,
    common: &CommonArgs,
) -> Result<RunResult, RunFailure> {
    let n = g.n();
    let delta = g.max_degree();
    let beta = common.beta.unwrap_or_else(|| default_beta(n));
    let alg = resolve_alg(common.alg, delta, beta);
    let cc_config = CcConfig {
        route_rounds: common.routing_const,
        route_capacity_factor: common.route_factor,
        ..CcConfig::default()
    };
    let program: Box<dyn CcProgram> = match alg {
        Alg::Highdeg => Box::new(HighDegProgram::new(n, beta, &cc_config)),
        Alg::Lowdeg => {
            let mut p = LowDegProgram::new(n, &cc_config);
            if let Some(t) = common.t_iters {
                p.t_iters = t;
            }
            Box::new(p)
        }
        Alg::Auto => unreachable!(),
    };

    let c = common
        .c
        .unwrap_or_else(|| MrConfig::measure_c(n, g.edge_count()));
    let mut report = RunReport {
        algorithm: alg_name(alg).into(),
        backend: backend_name(common.backend).into(),
        n,
        edge_prob,
        seed,
        delta,
        beta,
        eps: common.eps,
        c,
        cc_rounds: None,
        mr_rounds: None,
        trials: None,
        restarts: None,
        colors_used: 0,
        max_color: 0,
        residual_edges: None,
        max_igdeg: None,
        components: None,
        max_component: None,
        peak_reducer_words: None,
        lightweight_pass: None,
        equivalence: None,
        proper: false,
    };

    let want_cc = matches!(common.backend, Backend::Cc | Backend::Both);
    let want_mr = matches!(common.backend, Backend::Mr | Backend::Both);

    let mut outputs: Option<BTreeMap<NodeId, Vec<Word>>> = None;
    let mut profile_jsonl = None;
    let mut metrics_jsonl = None;
    let mut equivalence = None;

    let cc_run = if want_cc {
        let (run, trace) = run_cc_traced(program.as_ref(), g, seed, &cc_config)
            .map_err(|e| RunFailure::Fault(e.to_string()))?;
        report.cc_rounds = Some(run.rounds_used);
        let lw = check_lightweight(
            &run.profile,
            (g.edge_count() as u64).max(n as u64),
            n as u64,
            8,
            64,
        );
        report.lightweight_pass = Some(lw.pass);
        profile_jsonl = Some(run.profile.to_jsonl());
        outputs = Some(run.outputs.clone());
        Some((run, trace))
    } else {
        None
    };

    if want_mr {
        let mr = MrConfig::for_graph_scale(n, common.eps, c, seed);
        let sim = simulate(program.as_ref(), g, &mr, seed, cc_config.route_rounds)
            .map_err(|e| RunFailure::Fault(e.to_string()))?;
        report.mr_rounds = Some(sim.mr_rounds_used);
        report.peak_reducer_words = sim.metrics.iter().map(|m| m.peak_words).max();
        let mut lines = String::new();
        for m in &sim.metrics {
            let _ = writeln!(
                lines,
                "{}",
                serde_json::to_string(m).expect("metrics serialize")
            );
        }
        metrics_jsonl = Some(lines);
        if let Some((cc, trace)) = &cc_run {
            let matches = cc.outputs == sim.outputs;
            let mut first_divergence = None;
            if !matches {
                'scan: for (r, mr_states) in sim.state_trace.iter().enumerate() {
                    if let Some(cc_states) = trace.get(r) {
                        for (u, state) in mr_states {
                            if cc_states.get(u) != Some(state) {
                                first_divergence = Some((r as u32 + 1, *u));
                                break 'scan;
                            }
                        }
                    }
                }
                if first_divergence.is_none() {
                    let u = cc
                        .outputs
                        .iter()
                        .find(|(u, words)| sim.outputs.get(u) != Some(words))
                        .map(|(u, _)| *u)
                        .unwrap_or(0);
                    first_divergence = Some((cc.rounds_used + 1, u));
                }
            }
            report.equivalence = Some(if matches {
                "match".into()
            } else {
                "divergent".into()
            });
            equivalence = Some(EquivalenceReport {
                r#match: matches,
                first_divergence,
            });
            if !matches {
                return Err(RunFailure::CheckFailed("backend outputs diverge".into()));
            }
            let expected = 4 + 3 * cc.rounds_used;
            if sim.mr_rounds_used != expected {
                return Err(RunFailure::CheckFailed(format!(
                    "mr rounds {} != 4 + 3 * {}",
                    sim.mr_rounds_used, cc.rounds_used
                )));
            }
        } else {
            outputs = Some(sim.outputs.clone());
        }
    }

    let outputs = outputs.expect("at least one backend ran");
    let coloring = match alg {
        Alg::Highdeg => {
            let outcome =
                HighDegOutcome::from_outputs(&outputs).map_err(RunFailure::CheckFailed)?;
            report.trials = Some(outcome.trials);
            report.restarts = Some(outcome.restarts);
            report.residual_edges = Some(outcome.residual_edges);
            report.max_igdeg = Some(outcome.max_igdeg);
            outcome.coloring
        }
        Alg::Lowdeg => {
            let outcome = LowDegOutcome::from_outputs(&outputs).map_err(RunFailure::CheckFailed)?;
            report.components = Some(outcome.components);
            report.max_component = Some(outcome.max_component);
            outcome.coloring
        }
        Alg::Auto => unreachable!(),
    };

    // Independent properness pass before any report goes out.
    coloring
        .check_total_proper(g)
        .map_err(|e| RunFailure::CheckFailed(format!("coloring not proper: {e}")))?;
    report.proper = true;
    report.colors_used = coloring.colors_used() as u64;
    report.max_color = coloring.max_color();

    Ok(RunResult {
        report,
        coloring,
        profile_jsonl,
        metrics_jsonl,
        equivalence,
    })
}

fn load_graph(args: &GraphArgs, seed: u64) -> Result<(Graph, Option<f64>), String> {
    if let Some(path) = &args.input {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let g = Graph::read_edge_list(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        return Ok((g, None));
    }
    let n = args.n.ok_or("missing --n (or --input)")?;
    let p = args.p.ok_or("missing --p (or --input)")?;
    if !(0.0..=1.0).contains(&p) {
        return Err("--p must be in [0, 1]".into());
    }
    let g = match args.max_degree {
        Some(cap) => Graph::generate_capped(n, p, cap, seed),
        None => Graph::generate(n, p, seed),
    };
    Ok((g, Some(p)))
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let (g, edge_prob) = match load_graph(&args.graph, args.seed) {
        Ok(ok) => ok,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    let out = &args.common.out;
    match execute_run(&g, edge_prob, args.seed, &args.common) {
        Ok(result) => {
            let report = serde_json::to_string_pretty(&result.report).expect("report serializes");
            let mut status = Vec::new();
            status.push(write_out(out, "report.json", &report));
            status.push(write_out(
                out,
                "coloring.txt",
                &result.coloring.write_dump(),
            ));
            if let Some(p) = &result.profile_jsonl {
                status.push(write_out(out, "profile.jsonl", p));
            }
            if let Some(m) = &result.metrics_jsonl {
                status.push(write_out(out, "mr_metrics.jsonl", m));
            }
            if let Some(eq) = &result.equivalence {
                let text = serde_json::to_string_pretty(eq).expect("serializes");
                status.push(write_out(out, "equivalence.json", &text));
            }
            if let Some(Err(e)) = status.into_iter().find(|s| s.is_err()) {
                eprintln!("error: {e}");
                return ExitCode::from(4);
            }
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(RunFailure::CheckFailed(msg)) => {
            let text = serde_json::to_string_pretty(&ErrorReport {
                kind: "check-failed",
                error: msg,
            })
            .expect("serializes");
            let _ = write_out(out, "report.json", &text);
            eprintln!("{text}");
            ExitCode::from(2)
        }
        Err(RunFailure::Fault(msg)) => {
            let text = serde_json::to_string_pretty(&ErrorReport {
                kind: "engine-fault",
                error: msg,
            })
            .expect("serializes");
            let _ = write_out(out, "report.json", &text);
            eprintln!("{text}");
            ExitCode::from(3)
        }
    }
}

const CSV_HEADER: &str = "alg,backend,n,p,seed,delta,beta,rounds,mr_rounds,trials,restarts,\
colors_used,max_color,residual_edges,max_igdeg,components,max_component,lightweight,\
equivalence,status";

fn csv_cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(n: u32, p: f64, seed: u64, outcome: &Result<RunReport, String>) -> String {
    match outcome {
        Ok(r) => format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},ok",
            r.algorithm,
            r.backend,
            n,
            p,
            seed,
            r.delta,
            r.beta,
            csv_cell(&r.cc_rounds),
            csv_cell(&r.mr_rounds),
            csv_cell(&r.trials),
            csv_cell(&r.restarts),
            r.colors_used,
            r.max_color,
            csv_cell(&r.residual_edges),
            csv_cell(&r.max_igdeg),
            csv_cell(&r.components),
            csv_cell(&r.max_component),
            csv_cell(&r.lightweight_pass),
            r.equivalence.clone().unwrap_or_default(),
        ),
        Err(e) => {
            let safe = e.replace([',', '\n'], ";");
            format!(",,{n},{p},{seed},,,,,,,,,,,,,,,failed: {safe}")
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    if args.seed_to < args.seed_from {
        eprintln!("error: --seed-to below --seed-from");
        return ExitCode::from(4);
    }
    let threads: usize = std::env::var("CLIQUEMR_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1);

    let mut jobs: Vec<(u32, u64)> = Vec::new();
    for &n in &args.n_list {
        for seed in args.seed_from..args.seed_to {
            jobs.push((n, seed));
        }
    }

    let common = &args.common;
    let run_one = |n: u32, seed: u64| -> Result<RunReport, String> {
        let g = match args.max_degree {
            Some(cap) => Graph::generate_capped(n, args.p, cap, seed),
            None => Graph::generate(n, args.p, seed),
        };
        match execute_run(&g, Some(args.p), seed, common) {
            Ok(result) => Ok(result.report),
            Err(RunFailure::CheckFailed(e)) => Err(format!("check: {e}")),
            Err(RunFailure::Fault(e)) => Err(format!("fault: {e}")),
        }
    };

    let mut results: BTreeMap<(u32, u64), Result<RunReport, String>> = BTreeMap::new();
    if threads <= 1 || jobs.len() <= 1 {
        for &(n, seed) in &jobs {
            results.insert((n, seed), run_one(n, seed));
        }
    } else {
        let chunks: Vec<Vec<(u32, u64)>> = jobs
            .chunks(jobs.len().div_ceil(threads))
            .map(|c| c.to_vec())
            .collect();
        let collected = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    scope.spawn(|| {
                        chunk
                            .iter()
                            .map(|&(n, seed)| ((n, seed), run_one(n, seed)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect::<Vec<_>>()
        });
        results.extend(collected);
    }

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut ok_rows = 0u64;
    let mut sums = (0u64, 0u64, 0u64, 0u64); // trials, residual, max_igdeg, max_component
    for ((n, seed), outcome) in &results {
        csv.push_str(&csv_row(*n, args.p, *seed, outcome));
        csv.push('\n');
        if let Ok(r) = outcome {
            ok_rows += 1;
            sums.0 += r.trials.unwrap_or(0);
            sums.1 += r.residual_edges.unwrap_or(0);
            sums.2 += r.max_igdeg.unwrap_or(0);
            sums.3 += r.max_component.unwrap_or(0);
        }
    }
    if ok_rows > 0 {
        let mean = |s: u64| s as f64 / ok_rows as f64;
        let _ = writeln!(
            csv,
            "summary,,,,,,,,,{:.3},,,,{:.3},{:.3},,{:.3},,,{} runs",
            mean(sums.0),
            mean(sums.1),
            mean(sums.2),
            mean(sums.3),
            ok_rows
        );
    }

    match write_out(&common.out, "sweep.csv", &csv) {
        Ok(()) => {
            print!("{csv}");
            if results.values().all(|r| r.is_ok()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(4)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}
