//! `ragtune` command-line driver.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | simulation invariant violated or a query can never be admitted |
//! | 2 | invalid configuration, arguments or input data |
//! | 3 | profiler endpoint unavailable |
//! | 4 | file could not be written or read |
//! | 5 | profiler answer could not be parsed |

use clap::{Args, Parser, Subcommand};
use ragtune_core::config::{load_dataset_meta, EstimatorConfig, RunConfig};
use ragtune_core::mapping::PrunedConfigSpace;
use ragtune_core::metrics::{summarize, summarize_results, summary_csv, MetricsError, Summary};
use ragtune_core::profiler::{
    gate_profile, profile_query, FeedbackLedger, NoiseParams, ProfilerError, RecentSpaceWindow,
};
use ragtune_core::scheduler::SchedulerError;
use ragtune_core::sim::{default_sweep_grid, run, sweep, write_trace_events, Policy, SimError, SimReport};
use ragtune_core::types::{ConfigError, QueryRecord, RagConfig, TrueProfile};
use ragtune_core::workload::{gen_workload, ArrivalMode};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "ragtune", version, about = "Per-query RAG configuration adaptation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over the configured workload.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// `adaptive` or a fixed config such as `stuff/5` or `map_reduce/10/100`.
        #[arg(long, default_value = "adaptive")]
        policy: String,
    },
    /// Run every fixed config of a grid plus the adaptive policy on the same workload.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated fixed configs; an empty string runs only the adaptive policy.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Profile one query and show the gate decision and pruned space.
    Profile {
        query: String,
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// TOML file with `description` and `chunk_size`.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Hidden truth for the mock estimator.
        #[command(flatten)]
        truth: TruthArgs,
        /// Disable mock estimator noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Re-summarize an existing report file.
    Report {
        report: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file; built-in defaults when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    capacity_bytes: Option<u64>,
    #[arg(long)]
    num_queries: Option<usize>,
    /// Poisson arrival rate in queries per second.
    #[arg(long, conflicts_with = "sequential")]
    rate: Option<f64>,
    /// Issue each query when the previous one completes.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Also write the admission/completion event trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long, requires_all = ["complex", "pieces"])]
    joint: Option<bool>,
    #[arg(long, requires_all = ["joint", "pieces"])]
    complex: Option<bool>,
    #[arg(long, requires_all = ["joint", "complex"])]
    pieces: Option<u32>,
    #[arg(long, default_value_t = 60)]
    summary_len: u32,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn profiler_code(e: &ProfilerError) -> u8 {
    match e {
        ProfilerError::EstimatorUnavailable(_) => 3,
        ProfilerError::UnparseableAnswer(_) => 5,
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Metrics(_) => 2,
            CliError::Sim(e) => match e {
                SimError::Config(_) | SimError::Scheduler(SchedulerError::InvalidFixedConfig { .. }) => 2,
                SimError::Profiler { source, .. } => profiler_code(source),
                SimError::Scheduler(_) | SimError::InvariantViolation(_) | SimError::Stalled { .. } => 1,
            },
            CliError::Profiler(e) => profiler_code(e),
            CliError::Io { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(c) = self.capacity_bytes {
            cfg.capacity_bytes = c;
        }
        if let Some(n) = self.num_queries {
            cfg.workload.num_queries = n;
        }
        if let Some(rate) = self.rate {
            cfg.workload.arrival = ArrivalMode::Poisson { rate };
        }
        if self.sequential {
            cfg.workload.arrival = ArrivalMode::Sequential;
        }
        if let Some(p) = &self.report {
            cfg.output.report = p.clone();
        }
        if let Some(p) = &self.summary {
            cfg.output.summary = p.clone();
        }
        if let Some(p) = &self.trace {
            cfg.output.trace = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_reports(cfg: &RunConfig, reports: &[&SimReport], summaries: &[Summary]) -> Result<(), CliError> {
    let path = &cfg.output.report;
    let mut out = create(path)?;
    for r in reports {
        r.write_jsonl(&mut out).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    let table = summary_csv(summaries);
    write_file(&cfg.output.summary, &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_simulate(args: &RunArgs, policy: &str) -> Result<(), CliError> {
    let cfg = args.load()?;
    let policy: Policy = policy.parse()?;
    let workload = gen_workload(&cfg.workload.spec(), cfg.seed)?;
    let estimator = cfg.estimator()?;
    let outcome = run(&workload, &cfg.memory_model(), &cfg.sim_settings(), estimator.as_ref(), policy)?;
    let summaries: Vec<Summary> = summarize(&outcome.report).into_iter().collect();
    if let Some(path) = &cfg.output.trace {
        let mut out = create(path)?;
        write_trace_events(&outcome.trace, &mut out).and_then(|_| out.flush()).map_err(io_err(path))?;
    }
    write_reports(&cfg, &[&outcome.report], &summaries)
}

fn parse_grid(grid: Option<&str>) -> Result<Vec<RagConfig>, CliError> {
    match grid {
        None => Ok(default_sweep_grid()),
        Some(text) => text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<RagConfig>().map_err(CliError::from))
            .collect(),
    }
}

fn cmd_sweep(args: &RunArgs, grid: Option<&str>) -> Result<(), CliError> {
    let cfg = args.load()?;
    let grid = parse_grid(grid)?;
    let workload = gen_workload(&cfg.workload.spec(), cfg.seed)?;
    let estimator = cfg.estimator()?;
    let runs = sweep(&workload, &cfg.memory_model(), &cfg.sim_settings(), estimator.as_ref(), &grid)?;
    let reports: Vec<&SimReport> = runs.iter().map(|r| &r.report).collect();
    let summaries: Vec<Summary> = reports.iter().filter_map(|r| summarize(r).ok()).collect();
    write_reports(&cfg, &reports, &summaries)
}

fn cmd_profile(
    query: &str,
    config: Option<&Path>,
    meta: Option<&Path>,
    truth: &TruthArgs,
    noiseless: bool,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = meta {
        cfg.dataset = load_dataset_meta(path)?;
    }
    if noiseless {
        if let EstimatorConfig::Mock { noise, .. } = &mut cfg.profiler.estimator {
            *noise = NoiseParams::none();
        }
    }
    let hidden_truth = match (truth.joint, truth.complex, truth.pieces) {
        (Some(joint), Some(complex), Some(pieces)) => {
            let t = TrueProfile {
                needs_joint_reasoning: joint,
                complexity_high: complex,
                pieces_required: pieces,
                required_summary_len: truth.summary_len,
            };
            t.validate()?;
            Some(t)
        }
        _ => None,
    };
    let record = QueryRecord {
        id: "cli".into(),
        text: query.to_owned(),
        query_token_len: query.split_whitespace().count().max(1) as u32,
        ground_truth: None,
        hidden_truth,
    };
    let estimator = cfg.estimator()?;
    let output = profile_query(estimator.as_ref(), &record, &cfg.dataset, &FeedbackLedger::default())?;
    let mut window = RecentSpaceWindow::default();
    let decision = gate_profile(
        &output,
        &mut window,
        cfg.profiler.threshold,
        &cfg.scheduler.default_space,
        cfg.scheduler.limits.max_chunks,
    );
    let space: &PrunedConfigSpace = decision.space();
    let shown = serde_json::json!({
        "estimator": estimator.name(),
        "output": output,
        "gate": if decision.is_fallback() { "fallback" } else { "accepted" },
        "space": space,
    });
    println!("{}", serde_json::to_string_pretty(&shown).expect("json value serializes"));
    Ok(())
}

fn cmd_report(report: &Path, summary: Option<&Path>) -> Result<(), CliError> {
    let file = File::open(report).map_err(io_err(report))?;
    let parsed = SimReport::read_jsonl(BufReader::new(file))?;
    // A sweep report interleaves policies; keep them in first-seen order.
    let mut order: Vec<String> = Vec::new();
    for q in &parsed.queries {
        if !order.contains(&q.policy) {
            order.push(q.policy.clone());
        }
    }
    if order.is_empty() {
        return Err(MetricsError::EmptyReport.into());
    }
    let mut rows = Vec::new();
    for policy in &order {
        let rs: Vec<_> = parsed.queries.iter().filter(|q| &q.policy == policy).cloned().collect();
        rows.push(summarize_results(policy, &rs)?);
    }
    let table = summary_csv(&rows);
    match summary {
        Some(path) => write_file(path, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { run, policy } => cmd_simulate(run, policy),
        Command::Sweep { run, grid } => cmd_sweep(run, grid.as_deref()),
        Command::Profile { query, config, meta, truth, noiseless } => {
            cmd_profile(query, config.as_deref(), meta.as_deref(), truth, *noiseless)
        }
        Command::Report { report, summary } => cmd_report(report, summary.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
