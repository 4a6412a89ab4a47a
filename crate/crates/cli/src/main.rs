//! `dueso` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dueso", version, about = "UES opening detection from tri-axial neck accelerometry")]
struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Run the preprocessing chain over a raw dataset.
    Preprocess(PreprocessArgs),
    /// K-fold cross-validated training; writes one checkpoint per fold.
    Train(TrainArgs),
    /// Predict opening masks and events with a checkpoint.
    Predict(PredictArgs),
    /// Score predictions against labels.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Event SNR in dB.
    #[arg(long, conflicts_with = "noise_free")]
    pub snr: Option<f64>,
    /// No background at all, only the event.
    #[arg(long)]
    pub noise_free: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw dataset directory (needs a baseline recording).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory, raw or preprocessed.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoints and reports.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum epochs per fold.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A dataset directory or a single .sig file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Predictions JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSON file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory or directory of label files.
    #[arg(long)]
    pub truth: PathBuf,
    /// Output directory for the report files.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameters sampled per layer.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Scale one layer's analytic gradient to confirm the check catches it.
    #[arg(long, value_name = "LAYER")]
    pub corrupt: Option<String>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn print_error(kind: &str, message: &str) {
    let err = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{err}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            print_error("UsageError", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            print_error(f.kind(), &f.to_string());
            ExitCode::FAILURE
        }
    }
}
