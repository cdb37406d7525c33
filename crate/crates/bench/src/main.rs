use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use tubempc::sim::{metrics_summary, run_episode, ControllerKind, TaskSpec};
use tubempc_bench::check::run_check;
use tubempc_bench::compare::{run_compare, trace_file_name};
use tubempc_bench::config::{load_config, parse_config, ConfigError, ResolvedConfig};
use tubempc_bench::trace::emit_trace;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_EPISODE: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "tubempc", version, about = "Tube MPC benchmark for a planar three-link arm")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, env = "TUBEMPC_CONFIG")]
    config: Option<PathBuf>,
    /// Named preset used when no configuration file is given.
    #[arg(long, global = true, value_parser = ["paper"])]
    preset: Option<String>,
    /// First seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Restrict to one controller.
    #[arg(long, global = true, value_parser = ["optimal", "delayed", "smooth"])]
    controller: Option<String>,
    /// Restrict to one task.
    #[arg(long, global = true, value_parser = ["position", "trajectory"])]
    task: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Abort episodes whose stability conditions fail, and fail `check` on them.
    #[arg(long, global = true)]
    strict_theorem2: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single episode and write its trace.
    Simulate,
    /// Run every controller on every task and seed.
    Compare,
    /// Open-loop bound checks and the stability report.
    Check,
    /// Print the resolved configuration.
    Preset,
}

enum Failure {
    Config(ConfigError),
    Io(anyhow::Error),
    Episode(String),
    Property(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

fn resolve(cli: &Cli) -> Result<ResolvedConfig, ConfigError> {
    let mut c = match &cli.config {
        Some(path) => load_config(path)?,
        None => parse_config("")?,
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(n) = cli.seeds {
        c.seeds = n;
    }
    if let Some(ctrl) = &cli.controller {
        c.controllers = vec![ctrl.clone()];
    }
    if let Some(task) = &cli.task {
        c.tasks = vec![task.clone()];
    }
    if cli.strict_theorem2 {
        c.theorem2_policy = "abort".into();
    }
    c.validate()?;
    Ok(c)
}

fn write_manifest(out: &Path, config: &ResolvedConfig, seed: u64, file: &str) -> anyhow::Result<()> {
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config.hash(),
        "seed": seed,
        "trace": file,
        "config": config,
    });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn simulate(cli: &Cli, config: &ResolvedConfig) -> Result<(), Failure> {
    let controller: ControllerKind = config
        .controller_kinds()?
        .into_iter()
        .find(|c| cli.controller.is_none() || Some(c.name()) == cli.controller.as_deref())
        .unwrap_or(ControllerKind::SmoothTubeMpc);
    let task: TaskSpec = config
        .task_specs()?
        .into_iter()
        .next()
        .ok_or_else(|| ConfigError::Value("no task selected".into()))?;
    let seed = config.seed;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let file = trace_file_name(task.name(), controller, seed);
    write_manifest(&cli.out, config, seed, &file)?;
    let trace = run_episode(&config.sim_config(seed), controller, &task)
        .map_err(|e| Failure::Episode(e.to_string()))?;
    emit_trace(&trace, &cli.out.join(&file)).map_err(|e| Failure::Io(e.into()))?;
    let m = metrics_summary(&trace);
    println!(
        "{} {} seed {}: final error {:.6} m, mean error {:.6} m, steady error {:.6} m, cost {:.6}, violations {}",
        task.name(),
        controller.name(),
        seed,
        m.final_error,
        m.mean_error,
        m.steady_error,
        m.total_cost,
        m.violation_count
    );
    if let Some((step, msg)) = &trace.failure {
        return Err(Failure::Episode(format!("step {step}: {msg}")));
    }
    Ok(())
}

fn compare(cli: &Cli, config: &ResolvedConfig) -> Result<(), Failure> {
    let report = run_compare(
        config,
        &config.controller_kinds()?,
        &config.task_specs()?,
        &config.seed_list(),
        &cli.out,
    )
    .map_err(|e| Failure::Io(e.into()))?;
    print!("{}", report.render());
    if !report.all_completed() {
        return Err(Failure::Episode("some episodes failed, see summary.csv".into()));
    }
    let excess = report
        .runs
        .iter()
        .filter_map(|r| r.tube_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    if excess > 0.0 {
        return Err(Failure::Property(format!("tube left its radius by {excess:e}")));
    }
    if !report.ordering_holds() {
        return Err(Failure::Property("ordering property violated".into()));
    }
    Ok(())
}

fn check(cli: &Cli, config: &ResolvedConfig) -> Result<(), Failure> {
    let report = run_check(&config.sim_config(config.seed), config.seed)
        .map_err(|e| Failure::Episode(e.to_string()))?;
    print!("{}", report.render());
    if !report.passed() {
        return Err(Failure::Property("bound check failed".into()));
    }
    if cli.strict_theorem2 && !report.stability_holds() {
        return Err(Failure::Property("stability conditions do not hold".into()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = resolve(cli)?;
    match cli.command {
        Command::Simulate => simulate(cli, &config),
        Command::Compare => compare(cli, &config),
        Command::Check => check(cli, &config),
        Command::Preset => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_IO)
        }
        Err(Failure::Episode(e)) => {
            eprintln!("episode failure: {e}");
            ExitCode::from(EXIT_EPISODE)
        }
        Err(Failure::Property(e)) => {
            eprintln!("property failure: {e}");
            ExitCode::from(EXIT_PROPERTY)
        }
    }
}
