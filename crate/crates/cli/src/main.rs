mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taxocrawl::export::DEFAULT_BASE_IRI;

use crate::commands::Format;
use crate::config::CrawlFlags;

#[derive(Parser)]
#[command(name = "taxocrawl", version, about = "Build a concept hierarchy by querying a language model")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl a hierarchy from a seed concept.
    Crawl(CrawlFlags),
    /// Continue an interrupted crawl.
    Resume {
        /// Checkpoint file or the output directory holding it.
        checkpoint: PathBuf,
        #[arg(long, value_name = "IRI", default_value = DEFAULT_BASE_IRI)]
        base_iri: String,
    },
    /// Serialize the hierarchy stored in a checkpoint.
    Export {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "owl")]
        format: Format,
        /// Write here instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_name = "IRI", default_value = DEFAULT_BASE_IRI)]
        base_iri: String,
    },
    /// Print summary statistics and distributions of a checkpoint.
    Stats {
        checkpoint: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check a mock-oracle fixture file.
    ValidateFixture { fixture: PathBuf },
}

/// Why a command failed; each kind has its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    /// The oracle failed before any progress was checkpointed.
    Oracle(String),
    /// The oracle failed mid-crawl; a checkpoint allows resuming.
    Aborted(String),
    Checkpoint(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Oracle(_) => 3,
            Failure::Aborted(_) => 4,
            Failure::Checkpoint(_) => 5,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) => format!("configuration error: {m}"),
            Failure::Oracle(m) => format!("oracle failure: {m}"),
            Failure::Aborted(m) => format!("crawl aborted: {m}"),
            Failure::Checkpoint(m) => format!("checkpoint error: {m}"),
            Failure::Io(m) => m.clone(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Crawl(flags) => {
            let settings = config::resolve(&flags)?;
            let stats = commands::crawl(&settings)?;
            eprintln!("wrote {}", settings.out_dir.display());
            commands::emit(None, &stats.summary_table())
        }
        Command::Resume { checkpoint, base_iri } => {
            let stats = commands::resume(&checkpoint, &base_iri)?;
            commands::emit(None, &stats.summary_table())
        }
        Command::Export { checkpoint, format, output, base_iri } => {
            let text = commands::export(&checkpoint, format, &base_iri)?;
            commands::emit(output.as_deref(), &text)
        }
        Command::Stats { checkpoint, json } => {
            let stats = commands::stats(&checkpoint)?;
            let text = if json {
                serde_json::to_string_pretty(&stats).map_err(|e| Failure::Io(e.to_string()))? + "\n"
            } else {
                stats.to_text()
            };
            commands::emit(None, &text)
        }
        Command::ValidateFixture { fixture } => commands::emit(None, &commands::validate_fixture(&fixture)?),
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
        Err(failure) => {
            eprintln!("taxocrawl: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
