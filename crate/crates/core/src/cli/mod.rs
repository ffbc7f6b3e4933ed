//! Command-line front end. Every subcommand resolves its config from
//! defaults, an optional `--config` JSON file, then flags and `--set`
//! overrides, and writes the resolved config next to each artifact.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_set, resolve};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}

domain_from!(
    crate::rgba::ImageError,
    crate::edge::EdgeError,
    crate::aeq::AeqError,
    crate::adapter::AdapterError,
    crate::bench::BenchError,
    crate::nn::NnError,
    std::io::Error,
    serde_json::Error
);

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "alphafill",
    about = "Transparent-image inpainting: alpha edge quality, RGBA adapter, padding and benchmarks",
    disable_version_flag = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Print version information as JSON and exit
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
pub(crate) struct Common {
    /// JSON config file; its keys are overridden by flags
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config key, including nested ones (`--set stage1.lr=1e-4`)
    #[arg(long = "set", value_name = "KEY=JSON")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Composite an RGBA image over a solid background
    Composite(commands::CompositeArgs),
    /// Fill RGB under transparent pixels with a padding strategy
    Pad(commands::PadArgs),
    /// Apply a synthetic alpha-edge degradation and write its label map
    Degrade(commands::DegradeArgs),
    /// Train the edge-quality classifier
    AeqTrain(commands::AeqTrainArgs),
    /// Score an image with a trained classifier (prints JSON)
    AeqScore(commands::AeqScoreArgs),
    /// Train the single-frame backbone that the adapter keeps frozen
    Pretrain(commands::PretrainArgs),
    /// Run adapter training stage 1, stage 2 or both
    AdapterTrain(commands::AdapterTrainArgs),
    /// Inpaint an RGBA image inside a mask
    Inpaint(commands::InpaintArgs),
    /// Run a benchmark suite and write CSV, JSON and SVG reports
    Bench(commands::BenchArgs),
    /// Finite-difference gradient checks of the training losses
    GradCheck(commands::GradCheckArgs),
    /// Write a synthetic RGBA corpus with captions and a suite manifest
    Synth(commands::SynthArgs),
}

/// Machine-readable `--version` payload.
pub fn version_json() -> serde_json::Value {
    serde_json::json!({
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "checkpoint_format": "TIKT/1",
    })
}

/// Runs one invocation; `argv[0]` is the program name. Returns the exit
/// code: 0 success, 1 domain error, 2 usage error.
pub fn dispatch_to(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    if cli.version {
        let _ = writeln!(out, "{}", version_json());
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        let _ = writeln!(err, "error: a subcommand is required (see --help)");
        return EXIT_USAGE;
    };
    let result = match command {
        Command::Composite(a) => commands::composite(a, out, err),
        Command::Pad(a) => commands::pad(a, out, err),
        Command::Degrade(a) => commands::degrade(a, out, err),
        Command::AeqTrain(a) => commands::aeq_train(a, out, err),
        Command::AeqScore(a) => commands::aeq_score(a, out, err),
        Command::Pretrain(a) => commands::pretrain(a, out, err),
        Command::AdapterTrain(a) => commands::adapter_train(a, out, err),
        Command::Inpaint(a) => commands::inpaint(a, out, err),
        Command::Bench(a) => commands::bench(a, out, err),
        Command::GradCheck(a) => commands::grad_check(a, out, err),
        Command::Synth(a) => commands::synth(a, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Domain(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DOMAIN
        }
    }
}

/// [`dispatch_to`] on the process's stdout and stderr.
pub fn dispatch(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}
