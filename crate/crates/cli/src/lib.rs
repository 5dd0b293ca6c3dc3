//! Command-line front end: frequency models, corpus scoring, toy-task
//! training, evaluation and significance tests.

pub mod artifacts;
pub mod build_freq;
pub mod config;
pub mod eval;
pub mod score;
pub mod stats;
pub mod train;

use std::io::{ErrorKind, Write};

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use build_freq::{cmd_build_freq, BuildFreqArgs};
pub use config::{Preset, TrainConfig};
pub use eval::{cmd_eval, EvalArgs, EvalSummary};
pub use score::{cmd_score, ScoreArgs};
pub use stats::{cmd_stats, StatsArgs};
pub use train::{cmd_train, TrainArgs};

/// Exit status for a missing or unreadable input file.
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "rlam", version, about = "Accessibility rewards, readability metrics and PPO on a toy rewriting task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count a reference corpus and fit the word-accessibility model.
    BuildFreq(BuildFreqArgs),
    /// Per-document readability and accessibility metrics.
    Score(ScoreArgs),
    /// Train on the toy task from a TOML config.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint against the SFT policy.
    Eval(EvalArgs),
    /// Paired t-tests between two metrics CSVs with Bonferroni correction.
    Stats(StatsArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildFreq(args) => {
            let summary = cmd_build_freq(&args)?;
            print_stdout(&serde_json::to_string(&summary)?)?;
        }
        Command::Score(args) => {
            cmd_score(&args)?;
        }
        Command::Train(args) => {
            let (cfg, out_dir) = args.resolve()?;
            let outcome = cmd_train(&cfg, &out_dir)?;
            if let Some(last) = outcome.log.records.last() {
                eprintln!(
                    "trained {} steps: final reward {:.3}, kl {:.3}",
                    outcome.log.records.len(),
                    last.reward_mean,
                    last.kl
                );
            }
        }
        Command::Eval(args) => {
            let summary = cmd_eval(&args)?;
            print_stdout(&serde_json::to_string_pretty(&summary.greedy)?)?;
        }
        Command::Stats(args) => {
            cmd_stats(&args)?;
        }
    }
    Ok(())
}

/// Writes `text` and a newline to stdout. A closed pipe (`rlam ... | head`)
/// is not an error.
pub(crate) fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let missing = err.chain().any(|cause| {
        cause
            .downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == ErrorKind::NotFound)
            || matches!(
                cause.downcast_ref::<rlam::Error>(),
                Some(rlam::Error::Io { source, .. }) if source.kind() == ErrorKind::NotFound
            )
            || cause
                .downcast_ref::<csv::Error>()
                .is_some_and(|e| matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == ErrorKind::NotFound))
    });
    if missing {
        EXIT_MISSING_INPUT
    } else {
        EXIT_FAILURE
    }
}
