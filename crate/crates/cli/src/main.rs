// SPDX-License-Identifier: Apache-2.0

//! `fcnet`: synthesize archives, train, forecast and score.

mod commands;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fcnet_core::ErrorClass;

#[derive(Parser, Debug)]
#[command(name = "fcnet", version, about = "Dual-branch sea-ice-concentration forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Affb,
    Hfeb,
    Freqloss,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic daily archive as SICG shards plus a mask image.
    Synth {
        #[arg(long)]
        days: usize,
        /// Grid size as HxW, e.g. 64x64.
        #[arg(long)]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on an archive; writes the best checkpoint, its config and a log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Switch off a component; repeatable.
        #[arg(long, value_enum)]
        disable: Vec<Component>,
    },
    /// Forecast from the last T days of a sequence, chaining `steps` extra windows.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Config file; defaults to `<ckpt>.config.json`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a forecast against the truth and write the metrics CSV.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Archive whose training split defines the active region.
        #[arg(long)]
        active_from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-day PGM maps of prediction, truth and difference.
        #[arg(long)]
        maps: Option<PathBuf>,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { days, size, seed, out } => commands::synth(days, &size, seed, &out),
        Command::Train { data, config, out, disable } => commands::train(&data, &config, &out, &disable),
        Command::Predict { ckpt, input, steps, out, config } => {
            commands::predict(&ckpt, &input, steps, &out, config.as_deref())
        }
        Command::Evaluate { pred, truth, active_from, out, maps } => {
            commands::evaluate(&pred, &truth, &active_from, &out, maps.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
