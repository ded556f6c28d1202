use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reid_lstm::cli::{run, Command};

/// Siamese LSTM re-identification: synthesize data, train, evaluate, inspect gates.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one model per feature set
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score the test split and write the CMC/mAP report
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export gate activation norms for one image
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image_id: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match &args.command {
        Cmd::Synth { config } => run(Command::Synth, config, None),
        Cmd::Train { config } => run(Command::Train, config, None),
        Cmd::Eval { config } => run(Command::Eval, config, None),
        Cmd::Inspect { config, image_id } => run(Command::Inspect, config, Some(image_id)),
    };
    ExitCode::from(code as u8)
}
