mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{invalid, Invalid, JobConfig};

/// Contradiction retrieval with cosine similarity plus sparsity scoring.
#[derive(Parser)]
#[command(name = "contrascope", version)]
struct Cli {
    /// JSON job configuration; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Maximum worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted corpus bundle (and splits) or a corruption scenario.
    Synth,
    /// Retrieve top documents for every query and write a run file.
    Search,
    /// Score a run file against relevance judgments.
    Eval,
    /// Tune alpha on a validation set.
    TuneAlpha,
    /// Train a linear adapter on training tuples.
    Train,
    /// Add the adapted space to a corpus (and queries).
    ApplyAdapter,
    /// Remove contradictions of ground-truth documents from a corpus.
    Clean,
    /// Time combined-score computation.
    Bench,
    /// Compare analytic and numeric loss gradients.
    Gradcheck,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => JobConfig::load(p)?,
        None => JobConfig::default(),
    };
    cfg.apply_seed(cli.seed);
    let workers = match cli.workers {
        Some(0) => return Err(invalid("--workers must be >= 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    log::debug!("running with {workers} workers");
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Search => commands::search(&cfg, workers),
        Command::Eval => commands::eval(&cfg),
        Command::TuneAlpha => commands::tune(&cfg, workers),
        Command::Train => commands::train_cmd(&cfg, workers),
        Command::ApplyAdapter => commands::apply(&cfg),
        Command::Clean => commands::clean_cmd(&cfg, workers),
        Command::Bench => commands::bench(&cfg),
        Command::Gradcheck => commands::gradcheck_cmd(&cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 2;
    }
    match err.downcast_ref::<contrascope::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONTRASCOPE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
