//! `synthline` command-line front end.

use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use synthline::cluster::{self, Node};
use synthline::config::{serialize_config, to_value};
use synthline::episode::TaskContext;
use synthline::pipeline::{self, CostModel, FaultPlan, JobSpec, RunReport};
use synthline::store;

#[derive(Parser, Debug)]
#[command(name = "synthline", version, about = "Synthesize robot manipulation episodes from task configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate episodes into a store.
    Generate(GenerateArgs),
    /// Run the serial baseline and the pipeline on the same seeds and compare.
    Bench(BenchArgs),
    /// Print per-task trajectory and frame counts of a store.
    Stats(StoreArgs),
    /// Check a store for missing or inconsistent files.
    Validate(StoreArgs),
    /// Load, resolve and validate a task config, then print it.
    InspectConfig(InspectArgs),
    /// Serve episode jobs for a cluster coordinator.
    ServeNode(ServeArgs),
}

#[derive(Args, Debug, Clone)]
struct TaskArgs {
    /// Task config file, looked up directly and then under --config-root.
    #[arg(long)]
    config: PathBuf,
    /// Directory searched for config includes.
    #[arg(long, default_value = "fixtures/configs")]
    config_root: PathBuf,
    /// Directory of asset records.
    #[arg(long, default_value = "fixtures/assets")]
    assets: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    planner_workers: usize,
    #[arg(long, default_value_t = 1)]
    renderer_workers: usize,
    #[arg(long, default_value_t = 8)]
    queue_cap: usize,
    #[arg(long, default_value_t = 1)]
    render_batch: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_RETRY_LIMIT)]
    retry_limit: u32,
    /// Print machine-readable JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct CostArgs {
    /// Minimum planning time per episode, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    plan_ms: f64,
    /// Minimum fixed cost per render call, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    render_ms: f64,
    /// Minimum render time per frame, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    frame_ms: f64,
    /// Keep only this fraction of valid plans (spread evenly by index).
    #[arg(long)]
    plan_success: Option<f64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    costs: CostArgs,
    /// Run the single-worker baseline instead of the pipeline.
    #[arg(long)]
    serial: bool,
    /// Comma-separated `host:port[@capacity]` node list for cluster mode.
    #[arg(long, value_delimiter = ',', conflicts_with = "serial")]
    nodes: Vec<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    costs: CostArgs,
}

#[derive(Args, Debug)]
struct StoreArgs {
    #[arg(long, alias = "out")]
    store: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    listen: SocketAddr,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    costs: CostArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYNTHLINE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type Result<T> = std::result::Result<T, String>;

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Bench(args) => bench(args),
        Command::Stats(args) => stats(args),
        Command::Validate(args) => validate(args),
        Command::InspectConfig(args) => inspect(args),
        Command::ServeNode(args) => serve(args),
    }
}

fn config_path(task: &TaskArgs) -> PathBuf {
    let under_root = task.config_root.join(&task.config);
    if !task.config.exists() && under_root.exists() {
        under_root
    } else {
        task.config.clone()
    }
}

fn load_context(task: &TaskArgs) -> Result<Arc<TaskContext>> {
    let ctx = TaskContext::load(&config_path(task), Some(&task.config_root), &task.assets).map_err(|e| e.to_string())?;
    Ok(Arc::new(ctx))
}

fn job_spec(ctx: Arc<TaskContext>, run: &RunArgs, costs: &CostArgs, out: &Path) -> JobSpec {
    let ms = |v: f64| Duration::from_secs_f64(v.max(0.0) / 1000.0);
    let mut job = JobSpec::new(ctx, run.episodes, run.seed, out);
    job.planner_workers = run.planner_workers;
    job.renderer_workers = run.renderer_workers;
    job.queue_cap = run.queue_cap;
    job.render_batch = run.render_batch;
    job.retry_limit = run.retry_limit;
    job.costs = CostModel {
        plan: ms(costs.plan_ms),
        render_setup: ms(costs.render_ms),
        render_frame: ms(costs.frame_ms),
    };
    job.faults = FaultPlan {
        plan_success: costs.plan_success,
        ..FaultPlan::default()
    };
    job
}

fn parse_node(s: &str) -> Result<Node> {
    let (addr, capacity) = match s.split_once('@') {
        Some((a, c)) => (a, c.parse::<f64>().map_err(|e| format!("bad capacity in {s:?}: {e}"))?),
        None => (s, 1.0),
    };
    let addr = addr.parse().map_err(|e| format!("bad node address {addr:?}: {e}"))?;
    Ok(Node { addr, capacity })
}

fn outcome(report: &RunReport) -> ExitCode {
    if report.permanently_failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn generate(args: GenerateArgs) -> Result<ExitCode> {
    let ctx = load_context(&args.run.task)?;
    let job = job_spec(ctx, &args.run, &args.costs, &args.run.out);
    let report = if !args.nodes.is_empty() {
        let nodes = args.nodes.iter().map(|s| parse_node(s)).collect::<Result<Vec<_>>>()?;
        cluster::run_cluster(&job, &nodes)
    } else if args.serial {
        pipeline::run_serial_baseline(&job)
    } else {
        pipeline::run_pipeline(&job)
    }
    .map_err(|e| e.to_string())?;
    if args.run.json {
        println!("{}", to_json(&report));
    } else {
        println!("{}", report.summary());
        for f in &report.failures {
            println!("  episode {} failed at {}: {}", f.episode_index, f.stage, f.detail);
        }
    }
    Ok(outcome(&report))
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let ctx = load_context(&args.run.task)?;
    let serial_job = job_spec(ctx.clone(), &args.run, &args.costs, &args.run.out.join("serial"));
    let piped_job = job_spec(ctx, &args.run, &args.costs, &args.run.out.join("pipelined"));
    let serial = pipeline::run_serial_baseline(&serial_job).map_err(|e| e.to_string())?;
    let piped = pipeline::run_pipeline(&piped_job).map_err(|e| e.to_string())?;
    let speedup = serial.wall_time_s / piped.wall_time_s.max(f64::EPSILON);
    let same = store::digest(&serial_job.out).map_err(|e| e.to_string())? == store::digest(&piped_job.out).map_err(|e| e.to_string())?;
    if args.run.json {
        let value = json!({
            "serial": serial,
            "pipelined": piped,
            "speedup": speedup,
            "stores_identical": same,
        });
        println!("{}", to_json(&value));
    } else {
        println!("{:<10}  {:>8}  {:>10}  {:>10}  {:>12}", "mode", "written", "frames", "wall s", "episodes/s");
        for r in [&serial, &piped] {
            println!(
                "{:<10}  {:>8}  {:>10}  {:>10.3}  {:>12.3}",
                r.mode, r.written, r.frames_written, r.wall_time_s, r.episodes_per_s
            );
        }
        println!("speedup {speedup:.3}x, stores identical: {same}");
    }
    let code = if same && serial.permanently_failed == 0 && piped.permanently_failed == 0 { 0 } else { 1 };
    Ok(ExitCode::from(code))
}

fn stats(args: StoreArgs) -> Result<ExitCode> {
    let stats = store::compute_stats(&args.store).map_err(|e| e.to_string())?;
    if args.json {
        println!("{}", to_json(&stats));
    } else {
        print!("{stats}");
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: StoreArgs) -> Result<ExitCode> {
    let report = store::validate_store(&args.store);
    if args.json {
        println!("{}", to_json(&report));
    } else {
        println!("{} episodes, {} findings", report.episodes, report.findings.len());
        for f in &report.findings {
            println!("  {f}");
        }
    }
    Ok(ExitCode::from(if report.is_clean() { 0 } else { 1 }))
}

fn inspect(args: InspectArgs) -> Result<ExitCode> {
    let ctx = load_context(&args.task)?;
    if args.json {
        println!("{}", to_json(&to_value(&ctx.cfg)));
    } else {
        print!("{}", serialize_config(&ctx.cfg));
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(args: ServeArgs) -> Result<ExitCode> {
    let ctx = load_context(&args.task)?;
    let run = RunArgs {
        task: args.task.clone(),
        episodes: 0,
        seed: args.seed,
        out: args.out.clone(),
        planner_workers: 1,
        renderer_workers: 1,
        queue_cap: 1,
        render_batch: 1,
        retry_limit: pipeline::DEFAULT_RETRY_LIMIT,
        json: false,
    };
    let job = job_spec(ctx, &run, &args.costs, &args.out);
    let listener = TcpListener::bind(args.listen).map_err(|e| format!("bind {}: {e}", args.listen))?;
    log::info!("serving on {}", listener.local_addr().map_err(|e| e.to_string())?);
    cluster::serve(&job, listener).map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}
