//! `mmva` command-line driver.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    CleanArgs, EvalArgs, PairgenArgs, PromptArgs, RetrieveArgs, SigmaArgs, SummarizeArgs, SynthArgs, TrainArgs,
};

#[derive(Debug, Parser)]
#[command(name = "mmva", version, about = "Valence-arousal matching across images, music and captions")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat `key = value` file with training and model settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for read-only parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean image-music VA distance of a split.
    Sigma(SigmaArgs),
    /// Image/music pairs with matching scores for fixed-pair training.
    Pairgen(PairgenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Prediction errors on a split.
    Eval(EvalArgs),
    /// Caption-to-music retrieval by VA similarity.
    Retrieve(RetrieveArgs),
    /// Pick the generated prompt closest in VA to an image.
    Promptsearch(PromptArgs),
    /// Arousal-driven knapsack video summary.
    Summarize(SummarizeArgs),
    /// Strip audio-quality phrases from captions.
    CleanCaptions(CleanArgs),
    /// Write a synthetic dataset with linearly decodable VA labels.
    Synth(SynthArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<mmva::Error>().is_some()) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).target(env_logger::Target::Stderr).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
