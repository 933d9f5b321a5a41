//! Command-line entry point wiring dataset generation, pretraining, module
//! finetuning, evaluation, ablations, token analysis and gate reports.
//!
//! Exit codes: 0 success, 1 invariant or pipeline failure, 2 usage error.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "igc",
    about = "Gated-calculator language model: data, training, evaluation, ablations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the finetuning dataset and the pretraining corpus.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the data seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Re-run even when an identical artifact exists.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain the base transformer on the guessed-answer corpus.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Finetune the gated-calculator module on a frozen pretrained base.
    TrainIgc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Pretraining checkpoint directory.
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train a single seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a trained checkpoint: greedy decoding, exact match.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Trained model checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the mode from the config (plain, igc, igc+shortcut,
        /// shortcut-only).
        #[arg(long)]
        mode: Option<String>,
        /// Write one JSON line per calculator invocation here.
        #[arg(long)]
        calc_log: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run the ablation matrix as child processes and merge the report.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Analyze digit-chunk placement over a dataset's texts.
    AnalyzeTokens {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-token gate values of a trained model over a dataset split.
    GateReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            force,
        } => commands::gen_data::run(&config, &out, seed, force),
        Command::Pretrain {
            config,
            data,
            out,
            force,
        } => commands::pretrain::run(&config, &data, &out, force),
        Command::TrainIgc {
            config,
            data,
            base,
            out,
            seed,
            force,
        } => commands::train_igc::run(&config, &data, &base, &out, seed, force),
        Command::Eval {
            config,
            data,
            model,
            out,
            mode,
            calc_log,
            force,
        } => commands::eval::run(&config, &data, &model, &out, mode.as_deref(), calc_log, force),
        Command::Ablate {
            config,
            data,
            base,
            out,
            force,
        } => commands::ablate::run(&config, &data, &base, &out, force),
        Command::AnalyzeTokens { data, out } => commands::analyze_tokens::run(&data, &out),
        Command::GateReport {
            config,
            data,
            model,
            out,
            mode,
        } => commands::gate_report::run(&config, &data, &model, &out, mode.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
