use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcsmc_cli::config::{ExperimentConfig, ModelKind};
use dcsmc_cli::error::{CliError, Result};
use dcsmc_cli::{run_experiment, worker};

#[derive(Parser)]
#[command(name = "dcsmc", version, about = "Divide-and-conquer SMC experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Ising model on a periodic square lattice.
    Ising(RunArgs),
    /// Gaussian field observed through squared values.
    Gsm(RunArgs),
    /// Hierarchical binomial model from a dataset file.
    Hier(RunArgs),
    /// Listen for jobs from a driver (address from DCSMC_BIND).
    Worker(WorkerArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; omitted keys take the model's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the CSV and JSON files.
    #[arg(long, default_value = "dcsmc-out")]
    out: PathBuf,
    /// Worker control addresses, overriding the config roster.
    #[arg(long, value_delimiter = ',')]
    workers: Vec<String>,
}

#[derive(Args)]
struct WorkerArgs {
    /// Config supplying `distributed.bind` when DCSMC_BIND is unset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit after serving this many jobs.
    #[arg(long)]
    max_jobs: Option<usize>,
}

fn run(kind: ModelKind, args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path, kind)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.model.kind != kind {
        return Err(CliError::InvalidConfig(format!("config describes a {} model, not {kind}", cfg.model.kind)));
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if !args.workers.is_empty() {
        cfg.distributed.roster = args.workers;
    }
    cfg.validate()?;
    let out = run_experiment(&cfg, &args.out)?;
    let failed = out.replicates.iter().filter(|r| r.error.is_some()).count();
    println!("{} replicates ({failed} failed)", out.replicates.len());
    println!("results: {}", out.csv.display());
    println!("summary: {}", out.json.display());
    Ok(())
}

fn serve(args: WorkerArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => Some(ExperimentConfig::load(path, ModelKind::Ising)?),
        None => None,
    };
    let addr = worker::bind_address(cfg.as_ref());
    let listener = TcpListener::bind(&addr).map_err(|e| CliError::io(&addr, e))?;
    eprintln!("worker listening on {addr}");
    worker::serve(listener, args.max_jobs)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.verb {
        Verb::Ising(a) => run(ModelKind::Ising, a),
        Verb::Gsm(a) => run(ModelKind::Gsm, a),
        Verb::Hier(a) => run(ModelKind::Hier, a),
        Verb::Worker(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
