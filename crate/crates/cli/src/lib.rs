//! `cptrack` subcommands: `track`, `synth`, `eval` and `inspect`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod config;
mod eval;
mod inspect;
mod synth;
mod track;

pub use config::{load_config, RunMeta, TrackOverrides};

#[derive(Debug, Parser)]
#[command(name = "cptrack", version, about = "Cycle-pair point-prompt video object tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track every object in one or more sequences.
    Track(track::TrackArgs),
    /// Generate a synthetic sequence from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a tracking output against a ground-truth manifest.
    Eval(eval::EvalArgs),
    /// Print a result, memory dump, label mask or embedding file.
    Inspect { path: PathBuf },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Track(args) => track::run(args),
        Command::Synth { spec, out } => synth::run(&spec, &out),
        Command::Eval(args) => eval::run(args),
        Command::Inspect { path } => inspect::run(&path, &mut std::io::stdout().lock()),
    }
}
