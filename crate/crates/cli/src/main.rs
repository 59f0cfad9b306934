//! Command-line front end: segmentation, membership, synthesis, simulation,
//! and benchmark sweeps over the built-in models.
//!
//! Every run writes a manifest JSON alongside its primary output with the
//! full argument vector, parameters, and a result summary, so any output can
//! be reproduced bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use adha_core::automaton::{Adha, LocationId};
use adha_core::dynamics::AffineDynamics;
use adha_core::geometry::Polytope;
use adha_core::membership::{sreach_path, MembershipParams, Outcome, SReachApprox, StepRule};
use adha_core::models;
use adha_core::segmentation::{segment, FitBudget, SegmentationConfig};
use adha_core::simulation::{sample_corpus, SimConfig};
use adha_core::synthesis::synthesize;
use adha_core::trajectory::{PwaTrajectory, TimeSeries};

const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_INTERNAL: u8 = 70;

#[derive(Parser)]
#[command(name = "adha-synth", version, about = "Hybrid-automaton synthesis from time-series data")]
struct Cli {
    /// Worker threads for membership checks (env: ADHA_SYNTH_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a time series (CSV) into a piecewise-affine trajectory (JSON).
    Segment(SegmentArgs),
    /// Decide whether an automaton captures a trajectory within epsilon.
    Member(MemberArgs),
    /// Synthesize or extend an automaton from trajectories.
    Synthesize(SynthesizeArgs),
    /// Sample randomized executions from an automaton model.
    Simulate(SimulateArgs),
    /// Benchmark sweep over the built-in models.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optimizer restarts before a window is declared infeasible.
    #[arg(long, default_value_t = 200)]
    restarts: usize,
    /// Iterations per optimizer restart.
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
}

#[derive(Args)]
struct MemberArgs {
    #[arg(long)]
    automaton: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Comma-separated location path; all paths of matching length are tried
    /// when omitted.
    #[arg(long)]
    path: Option<String>,
    /// Fixed sample count per piece (default: 20 per time unit, at least 10).
    #[arg(long)]
    m: Option<usize>,
    /// Contraction step for refinement (default: epsilon / 10).
    #[arg(long)]
    contraction_delta: Option<f64>,
    /// Write the per-piece over/under constraint systems as CSV.
    #[arg(long)]
    emit_sets: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Trajectory JSON files, processed in order.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    output: PathBuf,
    /// Continue from an existing model instead of the empty automaton.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Per-trajectory statistics CSV.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    contraction_delta: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    automaton: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 6)]
    path_length: usize,
    #[arg(long, default_value_t = 7.0)]
    max_dwell: f64,
    #[arg(long, default_value_t = 0.05)]
    time_step: f64,
    #[arg(long, default_value_t = 0.001)]
    max_perturbation: f64,
    #[arg(long)]
    initial_location: Option<String>,
    /// Polytope JSON restricting the initial continuous states.
    #[arg(long)]
    initial_set: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Built-in model: heater or gearbox.
    #[arg(long)]
    model: String,
    /// Comma-separated epsilon sweep.
    #[arg(long, default_value = "0.1,0.07,0.04,0.01")]
    epsilons: String,
    #[arg(long)]
    output: PathBuf,
    /// Executions per sweep point (default: 100 heater, 10 gearbox).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    inputs: Vec<String>,
    parameters: serde_json::Value,
    tool_version: String,
    wall_time_seconds: f64,
    result_summary: String,
}

fn write_manifest(primary_output: &Path, manifest: &RunManifest) -> Result<()> {
    let mut path = primary_output.as_os_str().to_owned();
    path.push(".manifest.json");
    let body = serde_json::to_string_pretty(manifest)?;
    fs::write(PathBuf::from(path), body).context("writing manifest")?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("ADHA_SYNTH_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);
    match run(cli, threads) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = e.to_string().contains("exploration invariant");
            ExitCode::from(if internal { EXIT_INTERNAL } else { EXIT_DATA })
        }
    }
}

fn run(cli: Cli, threads: usize) -> Result<u8> {
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Segment(args) => cmd_segment(args, argv),
        Command::Member(args) => cmd_member(args, threads, argv),
        Command::Synthesize(args) => cmd_synthesize(args, threads, argv),
        Command::Simulate(args) => cmd_simulate(args, argv),
        Command::Bench(args) => cmd_bench(args, threads, argv),
    }
}

fn membership_params(
    m: Option<usize>,
    contraction_delta: Option<f64>,
    threads: usize,
) -> MembershipParams {
    MembershipParams {
        steps: match m {
            Some(fixed) => StepRule::Fixed(fixed),
            None => StepRule::PerUnitTime { per_unit: 20.0, floor: 10 },
        },
        contraction_delta,
        threads,
    }
}

fn load_automaton(path: &Path) -> Result<Adha> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let adha: Adha =
        serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))?;
    Ok(adha)
}

fn load_trajectory(path: &Path) -> Result<PwaTrajectory> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let f: PwaTrajectory =
        serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))?;
    Ok(f)
}

fn cmd_segment(args: SegmentArgs, argv: Vec<String>) -> Result<u8> {
    let started = Instant::now();
    let file = fs::File::open(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let series = TimeSeries::read_csv(file).context("parsing time series")?;
    let cfg = SegmentationConfig {
        budget: FitBudget { restarts: args.restarts, max_iters: args.max_iters },
        seed: args.seed,
    };
    let trajectory = segment(&series, args.delta, &cfg)?;
    fs::write(&args.output, serde_json::to_string_pretty(&trajectory)?)
        .with_context(|| format!("writing {}", args.output.display()))?;
    let summary = format!(
        "{} samples -> {} pieces over {:.6} s",
        series.len(),
        trajectory.piece_count(),
        trajectory.duration()
    );
    write_manifest(
        &args.output,
        &RunManifest {
            command: "segment".into(),
            argv,
            inputs: vec![args.input.display().to_string()],
            parameters: serde_json::json!({
                "delta": args.delta,
                "seed": args.seed,
                "restarts": args.restarts,
                "max_iters": args.max_iters,
            }),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            result_summary: summary.clone(),
        },
    )?;
    println!("{summary}");
    Ok(0)
}

/// All paths of the requested length through the transition graph, in
/// lexicographic location order.
fn enumerate_paths(h: &Adha, len: usize) -> Vec<Vec<LocationId>> {
    let mut paths = Vec::new();
    let mut stack: Vec<Vec<LocationId>> =
        h.location_ids().map(|q| vec![q.clone()]).collect();
    stack.reverse();
    while let Some(path) = stack.pop() {
        if path.len() == len {
            paths.push(path);
            continue;
        }
        let last = path.last().expect("paths start nonempty");
        let mut next: Vec<_> = h.outgoing(last).into_iter().map(|(to, _)| to.clone()).collect();
        next.sort();
        for to in next.into_iter().rev() {
            let mut extended = path.clone();
            extended.push(to);
            stack.push(extended);
        }
    }
    paths
}

fn path_flows(h: &Adha, path: &[LocationId]) -> Result<Vec<AffineDynamics>> {
    path.iter()
        .map(|q| {
            h.flow(q)
                .cloned()
                .ok_or_else(|| anyhow!("unknown location {q} in path"))
        })
        .collect()
}

fn cmd_member(args: MemberArgs, threads: usize, argv: Vec<String>) -> Result<u8> {
    let started = Instant::now();
    let h = load_automaton(&args.automaton)?;
    let f = load_trajectory(&args.trajectory)?;
    let params = membership_params(args.m, args.contraction_delta, threads);

    let candidate_paths: Vec<Vec<LocationId>> = match &args.path {
        Some(given) => {
            let path: Vec<LocationId> = given.split(',').map(|s| s.trim().to_string()).collect();
            if !h.path_is_valid(&path) {
                return Err(anyhow!("path {given} is not a path of the automaton"));
            }
            vec![path]
        }
        None => enumerate_paths(&h, f.piece_count()),
    };

    let mut best = Outcome::NotCaptured;
    let mut best_path: Option<Vec<LocationId>> = None;
    let mut best_chain: Vec<SReachApprox> = Vec::new();
    for path in &candidate_paths {
        let flows = path_flows(&h, path)?;
        let (chain, verdict) = sreach_path(None, &flows, &f, args.epsilon, &params)?;
        match verdict.outcome {
            Outcome::Captured => {
                best = Outcome::Captured;
                best_path = Some(path.clone());
                best_chain = chain;
                break;
            }
            Outcome::Unknown if best == Outcome::NotCaptured => {
                best = Outcome::Unknown;
                best_path = Some(path.clone());
                best_chain = chain;
            }
            _ => {
                if best_path.is_none() {
                    best_path = Some(path.clone());
                    best_chain = chain;
                }
            }
        }
    }

    if let Some(out) = &args.emit_sets {
        emit_sets_csv(out, &best_chain, f.dim())?;
    }
    let (verdict_name, code) = match best {
        Outcome::Captured => ("captured", 0),
        Outcome::NotCaptured => ("not-captured", 1),
        Outcome::Unknown => ("unknown", 2),
    };
    let summary = match &best_path {
        Some(p) if best == Outcome::Captured => {
            format!("{verdict_name} along {}", p.join(","))
        }
        _ => format!("{verdict_name} over {} candidate path(s)", candidate_paths.len()),
    };
    println!("{summary}");
    let manifest_target = args
        .emit_sets
        .clone()
        .unwrap_or_else(|| args.trajectory.with_extension("member"));
    write_manifest(
        &manifest_target,
        &RunManifest {
            command: "member".into(),
            argv,
            inputs: vec![
                args.automaton.display().to_string(),
                args.trajectory.display().to_string(),
            ],
            parameters: serde_json::json!({
                "epsilon": args.epsilon,
                "path": args.path,
                "m": args.m,
                "contraction_delta": args.contraction_delta,
                "threads": threads,
            }),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            result_summary: summary,
        },
    )?;
    Ok(code)
}

fn emit_sets_csv(path: &Path, chain: &[SReachApprox], dim: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["piece".to_string(), "kind".into(), "relation".into(), "offset".into()];
    header.extend((1..=dim).map(|i| format!("normal_{i}")));
    wtr.write_record(&header)?;
    for (i, approx) in chain.iter().enumerate() {
        for (kind, set) in [("over", &approx.over), ("under", &approx.under)] {
            let Some(set) = set else { continue };
            for c in set.constraints() {
                let mut row = vec![
                    (i + 1).to_string(),
                    kind.to_string(),
                    match c.relation() {
                        adha_core::geometry::Relation::Le => "le".to_string(),
                        adha_core::geometry::Relation::Eq => "eq".to_string(),
                    },
                    format!("{}", c.offset()),
                ];
                row.extend(c.normal().iter().map(|v| format!("{v}")));
                wtr.write_record(&row)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

fn cmd_synthesize(args: SynthesizeArgs, threads: usize, argv: Vec<String>) -> Result<u8> {
    let started = Instant::now();
    let trajectories: Vec<PwaTrajectory> = args
        .input
        .iter()
        .map(|p| load_trajectory(p))
        .collect::<Result<_>>()?;
    let start = match &args.resume {
        Some(path) => Some(load_automaton(path)?),
        None => None,
    };
    let params = membership_params(args.m, args.contraction_delta, threads);
    let result = synthesize(&trajectories, args.epsilon, &params, start)?;
    fs::write(&args.output, serde_json::to_string_pretty(&result.automaton)?)
        .with_context(|| format!("writing {}", args.output.display()))?;

    if let Some(stats_path) = &args.stats {
        let mut wtr = csv::Writer::from_path(stats_path)
            .with_context(|| format!("writing {}", stats_path.display()))?;
        wtr.write_record([
            "trajectory",
            "explored_nodes",
            "wall_time_s",
            "locations",
            "transitions",
            "witness_path",
        ])?;
        for s in &result.stats {
            wtr.write_record([
                s.index.to_string(),
                s.explored_nodes.to_string(),
                format!("{:.6}", s.wall_time.as_secs_f64()),
                s.locations.to_string(),
                s.transitions.to_string(),
                s.witness_path.join(" "),
            ])?;
        }
        wtr.flush()?;
    }

    let summary = format!(
        "{} trajectories -> {} locations, {} transitions",
        trajectories.len(),
        result.automaton.location_count(),
        result.automaton.transition_count()
    );
    write_manifest(
        &args.output,
        &RunManifest {
            command: "synthesize".into(),
            argv,
            inputs: args.input.iter().map(|p| p.display().to_string()).collect(),
            parameters: serde_json::json!({
                "epsilon": args.epsilon,
                "resume": args.resume.as_ref().map(|p| p.display().to_string()),
                "m": args.m,
                "contraction_delta": args.contraction_delta,
                "threads": threads,
            }),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            result_summary: summary.clone(),
        },
    )?;
    println!("{summary}");
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs, argv: Vec<String>) -> Result<u8> {
    let started = Instant::now();
    let h = load_automaton(&args.automaton)?;
    let initial_set: Option<Polytope> = match &args.initial_set {
        Some(path) => {
            let body = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&body)?)
        }
        None => None,
    };
    let cfg = SimConfig {
        path_length: args.path_length,
        max_dwell: args.max_dwell,
        time_step: args.time_step,
        max_perturbation: args.max_perturbation,
        seed: args.seed,
        stream: 0,
        initial_location: args.initial_location.clone(),
        initial_set,
    };
    let corpus = sample_corpus(&h, args.count, &cfg)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let index_path = args.out_dir.join("corpus.csv");
    let mut wtr = csv::Writer::from_path(&index_path)?;
    wtr.write_record(["index", "seed", "stream", "file", "path", "switch_times"])?;
    for (i, e) in corpus.iter().enumerate() {
        let file = format!("trajectory_{i:03}.json");
        fs::write(
            args.out_dir.join(&file),
            serde_json::to_string_pretty(&e.trajectory)?,
        )?;
        let times: Vec<String> =
            e.trajectory.switch_times().iter().map(|t| format!("{t}")).collect();
        wtr.write_record([
            i.to_string(),
            args.seed.to_string(),
            i.to_string(),
            file,
            e.path.join(" "),
            times.join(" "),
        ])?;
    }
    wtr.flush()?;

    let summary = format!("{} executions into {}", corpus.len(), args.out_dir.display());
    write_manifest(
        &index_path,
        &RunManifest {
            command: "simulate".into(),
            argv,
            inputs: vec![args.automaton.display().to_string()],
            parameters: serde_json::json!({
                "count": args.count,
                "seed": args.seed,
                "path_length": args.path_length,
                "max_dwell": args.max_dwell,
                "time_step": args.time_step,
                "max_perturbation": args.max_perturbation,
                "initial_location": args.initial_location,
            }),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            result_summary: summary.clone(),
        },
    )?;
    println!("{summary}");
    Ok(0)
}

fn cmd_bench(args: BenchArgs, threads: usize, argv: Vec<String>) -> Result<u8> {
    let started = Instant::now();
    let epsilons: Vec<f64> = args
        .epsilons
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad epsilon: {e}")))
        .collect::<Result<_>>()?;

    let (h, cfg, default_count) = match args.model.as_str() {
        "heater" => (models::heater(), SimConfig { seed: args.seed, ..Default::default() }, 100),
        "gearbox" => {
            let (q0, init) = models::gearbox_initial();
            (
                models::gearbox(),
                SimConfig {
                    seed: args.seed,
                    max_perturbation: 1e-4,
                    initial_location: Some(q0),
                    initial_set: Some(init),
                    ..Default::default()
                },
                10,
            )
        }
        other => return Err(anyhow!("unknown model {other}; expected heater or gearbox")),
    };
    let count = args.count.unwrap_or(default_count);
    let corpus = sample_corpus(&h, count, &cfg)?;
    let trajectories: Vec<PwaTrajectory> =
        corpus.iter().map(|e| e.trajectory.clone()).collect();

    let mut wtr =
        csv::Writer::from_path(&args.output).with_context(|| format!("writing {}", args.output.display()))?;
    wtr.write_record([
        "model",
        "epsilon",
        "executions",
        "locations",
        "transitions",
        "explored_nodes",
        "wall_time_s",
    ])?;
    let params = membership_params(None, None, threads);
    for eps in &epsilons {
        let t = Instant::now();
        let result = synthesize(&trajectories, *eps, &params, None)?;
        let explored: usize = result.stats.iter().map(|s| s.explored_nodes).sum();
        wtr.write_record([
            args.model.clone(),
            format!("{eps}"),
            count.to_string(),
            result.automaton.location_count().to_string(),
            result.automaton.transition_count().to_string(),
            explored.to_string(),
            format!("{:.3}", t.elapsed().as_secs_f64()),
        ])?;
        println!(
            "{} eps={eps}: |Q|={} |E|={} explored={explored}",
            args.model,
            result.automaton.location_count(),
            result.automaton.transition_count()
        );
    }
    wtr.flush()?;
    write_manifest(
        &args.output,
        &RunManifest {
            command: "bench".into(),
            argv,
            inputs: vec![],
            parameters: serde_json::json!({
                "model": args.model,
                "epsilons": epsilons,
                "count": count,
                "seed": args.seed,
                "threads": threads,
            }),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            result_summary: format!("{} sweep over {} epsilon values", args.model, epsilons.len()),
        },
    )?;
    Ok(0)
}
