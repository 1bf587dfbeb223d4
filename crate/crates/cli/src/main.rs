use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod plot;
mod report;

use config::RunConfig;

/// Phased distribution matching distillation on toy distributions.
#[derive(Parser, Debug)]
#[command(name = "pdmd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override one config key (repeatable; later wins).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the teacher flow and check it against the analytic velocity.
    TrainTeacher,
    /// Full-interval vs subinterval flow trajectories.
    ToyFig3,
    /// Distill the teacher into a few-step generator.
    Distill,
    /// Noise-interval and fixed-time ablations.
    Ablate,
    /// Summarize run reports (a file or a directory; default: the output directory).
    Report { path: Option<PathBuf> },
    /// List config keys with defaults.
    Keys,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out", &out.display().to_string())?;
    }
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("PDMD_THREADS") {
        let n: usize = raw
            .parse()
            .with_context(|| format!("PDMD_THREADS={raw:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    init_threads()?;
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::TrainTeacher => commands::train_teacher(&cfg),
        Command::ToyFig3 => commands::toy_fig3(&cfg),
        Command::Distill => commands::distill(&cfg),
        Command::Ablate => commands::ablate_cmd(&cfg),
        Command::Report { path } => commands::report_cmd(&path.clone().unwrap_or_else(|| cfg.out())),
        Command::Keys => {
            for (k, v, doc) in config::KEYS {
                println!("{k:<28} {v:<16} {doc}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
