//! `gaitxai`: batch commands for the gait classification and explanation
//! pipeline. Every command reads the same flat configuration; data goes to
//! files under the output directory and diagnostics to stderr.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ConfigMap;

#[derive(Parser)]
#[command(name = "gaitxai", version, about = "Train, explain and audit gait classifiers")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (config key `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic force-plate dataset.
    Synth,
    /// Parse, window, split and standardize recordings.
    Ingest,
    /// Train a model on the dataset's training split.
    Train,
    /// Score the model on the test split.
    Evaluate,
    /// Write relevance maps and gait-event attributions.
    Explain {
        /// Explain this class instead of each sample's label.
        #[arg(long)]
        class: Option<usize>,
        /// Explain one recording, optionally `RECORDING:WINDOW`.
        #[arg(long)]
        sample: Option<String>,
    },
    /// Most-relevant-first perturbation curves and rankings.
    Perturb,
    /// Merge the outputs of one or more runs.
    Report {
        /// Directory holding run outputs (default: the output directory).
        dir: Option<PathBuf>,
    },
    /// Print the resolved configuration, or every key with `--keys`.
    Config {
        #[arg(long)]
        keys: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Explain { .. } => "explain",
            Command::Perturb => "perturb",
            Command::Report { .. } => "report",
            Command::Config { .. } => "config",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let mut map = ConfigMap::default();
    if let Some(path) = &cli.config {
        map.apply_file(path)?;
    }
    for pair in &cli.set {
        map.set_pair(pair)?;
    }
    if let Some(out) = &cli.out {
        map.set("out", &out.display().to_string())?;
    }
    if let Some(seed) = cli.seed {
        map.set("seed", &seed.to_string())?;
    }
    let cfg = map.resolve()?;
    match &cli.command {
        Command::Config { keys } => {
            print!("{}", if *keys { config::describe_keys() } else { map.dump() });
            return Ok(());
        }
        Command::Report { dir } => return commands::report(dir.as_deref().unwrap_or(&cfg.out)),
        _ => {}
    }
    files::write(&cfg.out.join(format!("{}.config.txt", cli.command.name())), map.dump())?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Ingest => commands::ingest(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Explain { class, sample } => commands::explain(&cfg, &commands::Selector { sample, class }),
        Command::Perturb => commands::perturb(&cfg),
        Command::Report { .. } | Command::Config { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
