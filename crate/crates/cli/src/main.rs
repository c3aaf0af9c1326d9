//! `lgcm`: build vocabularies, train, evaluate, generate, inspect weights
//! and count encoder FLOPs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (missing or malformed files, empty corpora, bad checkpoints), 3 numeric
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lgcm::model::flops::Convention;

#[derive(Parser, Debug)]
#[command(name = "lgcm", version, about = "Local-global hierarchical transformer for multi-turn dialog")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary from a JSONL corpus and print its size.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints, the metric log and the resolved
    /// config into the configured output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score greedy responses on a split (train, valid, test or a JSONL path).
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Debug: use each reference as its own hypothesis.
        #[arg(long)]
        copy_reference: bool,
    },
    /// Print the greedy response to the last turns of a one-dialog JSONL file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        context_file: PathBuf,
        #[arg(long)]
        max_new_tokens: Option<usize>,
    },
    /// Export utterance-attention and gate heatmaps as CSV plus an ASCII view.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split name (needs --config) or a JSONL path.
        #[arg(long)]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare hierarchical and flat encoder FLOPs for one context shape.
    Flops {
        /// Model shape; the base-size configuration when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Total context tokens.
        #[arg(long = "L", value_name = "L")]
        l: Option<usize>,
        /// Number of context utterances.
        #[arg(long = "N", value_name = "N")]
        n: Option<usize>,
        /// Explicit per-utterance lengths instead of --L/--N.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["l", "n"])]
        lengths: Vec<usize>,
        #[arg(long, value_enum, default_value_t = ConventionArg::Leading)]
        convention: ConventionArg,
        /// Print a CSV row instead of the table.
        #[arg(long)]
        csv: bool,
    },
    /// Write the synthetic copy/reverse corpus and a matching run config.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConventionArg {
    Leading,
    Exact,
}

impl From<ConventionArg> for Convention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Leading => Convention::Leading,
            ConventionArg::Exact => Convention::Exact,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
