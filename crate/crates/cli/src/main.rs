use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};
use seqadv::attacks::Method;
use seqadv::runner::{self, ExperimentConfig, Split, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "seqadv", version, about = "Adversarial attacks on sequence classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set attack.lambda=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        overrides.extend(extra);
        ExperimentConfig::load(&self.config, &overrides).with_context(|| format!("loading {}", self.config.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every model and write checkpoints plus a manifest.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Attack a data split and write one JSONL line per example.
    Attack {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        method: Option<Method>,
        /// Candidates per example.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        split: Option<Split>,
        /// Attack only the first K examples.
        #[arg(long)]
        limit: Option<usize>,
        /// Keep every candidate in the output.
        #[arg(long)]
        trace: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score an attack results file against the target classifier.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        results: PathBuf,
    },
    /// Attack and evaluate over sampled hyperparameters.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        method: Option<Method>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print original and adversarial sequences side by side.
    ShowExamples {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        results: PathBuf,
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config } => {
            let cfg = config.load(Vec::new())?;
            let run = runner::cmd_train(&cfg)?;
            info!("wrote {}", run.paths.manifest().display());
            println!("{}", serde_json::to_string_pretty(&run.manifest.metrics)?);
        }
        Command::Attack {
            config,
            method,
            n,
            split,
            limit,
            trace,
            output,
        } => {
            let mut extra = Vec::new();
            if let Some(m) = method {
                extra.push(format!("attack.method=\"{m}\""));
            }
            if let Some(n) = n {
                extra.push(format!("attack.n={n}"));
            }
            if let Some(s) = split {
                let s = if s == Split::Train { "train" } else { "test" };
                extra.push(format!("attack.split=\"{s}\""));
            }
            if let Some(k) = limit {
                extra.push(format!("attack.n_examples={k}"));
            }
            let cfg = config.load(extra)?;
            let path = runner::cmd_attack(&cfg, trace, output.as_deref())?;
            println!("{}", path.display());
        }
        Command::Evaluate { config, results } => {
            let cfg = config.load(Vec::new())?;
            let report = runner::cmd_evaluate(&cfg, &results)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep { config, method, output } => {
            let extra = method.map(|m| format!("attack.method=\"{m}\"")).into_iter().collect();
            let cfg = config.load(extra)?;
            let (path, rows) = runner::cmd_sweep(&cfg, output.as_deref())?;
            println!("{}", path.display());
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                error!("{failed} of {} sweep points failed", rows.len());
                return Ok(false);
            }
        }
        Command::ShowExamples { config, results, limit } => {
            let cfg = config.load(Vec::new())?;
            print!("{}", runner::show_examples(&cfg, &results, limit)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
        info!("relative output directories resolve under {}", PathBuf::from(root).display());
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
