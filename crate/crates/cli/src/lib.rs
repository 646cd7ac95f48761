//! Command-line front end: dataset generation, training, closed-loop
//! evaluation, single-frame inference and log scoring.

pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod policy;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cogfuse", version, about = "Semantics-guided transformer fusion for waypoint prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record expert episodes into a dataset directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive seeded routes in closed loop and write a benchmark TSV.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Required unless `eval.driver` is `expert` or `red_runner`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        routes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict waypoints and a control command for recorded frames.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frame: PathBuf,
    },
    /// Recompute DS/RC from stored episode logs.
    Score {
        #[arg(long)]
        logs: PathBuf,
    },
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData { config, out: dir } => commands::gen_data(&config, &dir, out).map(drop),
        Command::Train { config, data, out: ckpt } => commands::train(&config, &data, &ckpt, out).map(drop),
        Command::Eval {
            config,
            checkpoint,
            routes,
            seed,
            out: tsv,
        } => commands::eval(&config, checkpoint.as_deref(), routes, seed, &tsv, out).map(drop),
        Command::Infer { checkpoint, frame } => commands::infer(&checkpoint, &frame, out).map(drop),
        Command::Score { logs } => commands::score(&logs, out).map(drop),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status: 0 on success, 1 on usage errors, 2 on data or config errors.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
