//! `attrib`: attribution maps, evaluation, sensitivity sweeps and fixtures.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 I/O or file-format error,
//! 4 method failure.

mod attribute;
mod config;
mod evaluate;
mod fixtures;
mod oracle;
mod sensitivity;

use std::process::ExitCode;

use attrib_core::AttribError;
use clap::{ArgAction, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attrib", version, about = "Perturbation-based attribution maps for image classifiers")]
struct Cli {
    /// Worker threads; outputs are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a heatmap for one image.
    Attribute(attribute::AttributeArgs),
    /// Score heatmaps on an annotated dataset.
    Evaluate(evaluate::EvaluateArgs),
    /// Rerun a method across a hyperparameter axis and compare the heatmaps.
    Sensitivity(sensitivity::SensitivityArgs),
    /// Generate the synthetic shapes dataset and train its classifier.
    Fixtures(fixtures::FixturesArgs),
    /// Inpaint a masked region with the built-in diffusion solver.
    Inpaint(fixtures::InpaintArgs),
}

/// A command-line mistake (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<AttribError>() {
            return match e.root() {
                AttribError::Io { .. } | AttribError::Format { .. } | AttribError::Codec { .. } => 3,
                AttribError::Parameter(_) => 2,
                _ => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return 3;
        }
    }
    4
}

/// The error chain, skipping causes already spelled out by their parent.
fn render(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Attribute(args) => attribute::run(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::Sensitivity(args) => sensitivity::run(args),
        Command::Fixtures(args) => fixtures::run(args),
        Command::Inpaint(args) => fixtures::inpaint(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", render(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
