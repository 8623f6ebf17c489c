//! `senselearn`: synthetic data, pre-training and evaluation protocols.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use senselearn::ingest::SynthVariant;

use crate::commands::Context;
use crate::config::{ExperimentConfig, Overrides};
use crate::error::{exit, CliResult};

#[derive(Debug, Parser)]
#[command(name = "senselearn", version, about = "Self-supervised learning for multisensor time-series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic two-modality dataset to --out.
    Synth {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Pre-train an encoder on a pretext task; --out is the checkpoint file.
    Pretrain(Flags),
    /// Linear classifier on the frozen encoder.
    Probe(Flags),
    /// Fine-tune the shared layer together with a linear classifier.
    Finetune(Flags),
    /// Fine-tune on --n labeled windows per class, paired with a from-scratch run.
    Lowdata(Flags),
    /// Evaluate --source-ckpt on the --data dataset (probe, or low-data with --n).
    Transfer(Flags),
    /// Subject-disjoint k-fold pre-training and probing.
    Cv(Flags),
    /// Fully supervised network on the same split.
    Baseline(Flags),
    /// Summarize the results table in --out.
    Report(Flags),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    A,
    B,
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Dataset manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    source_ckpt: Option<PathBuf>,
    /// Output directory (checkpoint file for `pretrain`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Labeled windows per class.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            data: self.data.clone(),
            task: self.task.clone(),
            out: self.out.clone(),
            seed: self.seed,
            ckpt: self.ckpt.clone(),
            source_ckpt: self.source_ckpt.clone(),
            runs: self.runs,
            n: self.n,
            folds: self.folds,
        }
    }
}

impl Command {
    fn parts(&self) -> (&'static str, &Flags) {
        match self {
            Command::Synth { flags, .. } => ("synth", flags),
            Command::Pretrain(f) => ("pretrain", f),
            Command::Probe(f) => ("probe", f),
            Command::Finetune(f) => ("finetune", f),
            Command::Lowdata(f) => ("lowdata", f),
            Command::Transfer(f) => ("transfer", f),
            Command::Cv(f) => ("cv", f),
            Command::Baseline(f) => ("baseline", f),
            Command::Report(f) => ("report", f),
        }
    }
}

fn execute(cli: &Cli, argv: &[String]) -> CliResult<()> {
    let deterministic_env = commands::deterministic_env()?;
    let (name, flags) = cli.command.parts();
    let mut config = ExperimentConfig::resolve(flags.config.as_deref(), flags.overrides(), name)?;
    if let Command::Synth { variant: Some(v), .. } = &cli.command {
        let v = match v {
            Variant::A => SynthVariant::A,
            Variant::B => SynthVariant::B,
        };
        commands::set_variant(&mut config, v);
    }
    commands::run(&Context {
        command: name,
        argv,
        config: &config,
        deterministic_env,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
