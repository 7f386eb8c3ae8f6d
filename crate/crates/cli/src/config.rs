use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use taxocrawl::crawler::{CrawlConfig, ExplorationDepth, OracleSelector};
use taxocrawl::export::DEFAULT_BASE_IRI;

use crate::Failure;

pub const DEFAULT_OUT_DIR: &str = "out";

/// Crawl flags. Each one has a key of the same meaning in the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct CrawlFlags {
    /// TOML file with crawl settings; flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed concept (`seed_name`).
    #[arg(long)]
    pub seed: Option<String>,
    /// Exploration depth, an integer or "none" (`exploration_depth`).
    #[arg(long, value_name = "N|none")]
    pub depth: Option<ExplorationDepth>,
    /// Frequency threshold out of the samples (`ft`).
    #[arg(long)]
    pub ft: Option<usize>,
    /// First-token samples per listing (`n_samples`).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Chat model name (`params.model`).
    #[arg(long)]
    pub model: Option<String>,
    /// `llm` or `mock:<fixture.json>` (`oracle`).
    #[arg(long, value_name = "llm|mock:PATH")]
    pub oracle: Option<OracleSelector>,
    /// Output directory (`out_dir`).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Stop once the hierarchy holds this many concepts (`max_concepts`).
    #[arg(long)]
    pub max_concepts: Option<usize>,
    /// Concurrent oracle requests (`max_in_flight`).
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Base IRI of exported classes (`base_iri`).
    #[arg(long, value_name = "IRI")]
    pub base_iri: Option<String>,
}

/// Everything a crawl needs, after defaults, file and flags are layered.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub crawl: CrawlConfig,
    pub out_dir: PathBuf,
    pub base_iri: String,
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

/// Reads a config file. Besides the crawl settings it may hold `out_dir`
/// and `base_iri`; a mock fixture path is taken relative to the file.
pub fn read_file(path: &Path) -> Result<(CrawlConfig, Option<PathBuf>, Option<String>), Failure> {
    let text = fs::read_to_string(path).map_err(|e| config_error(path, e))?;
    let mut table: toml::Table = text.parse().map_err(|e| config_error(path, e))?;
    let take_str = |table: &mut toml::Table, key: &str| -> Result<Option<String>, Failure> {
        match table.remove(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(config_error(path, format!("{key} must be a string, got {other}"))),
        }
    };
    let base = path.parent().unwrap_or(Path::new(""));
    let out_dir = take_str(&mut table, "out_dir")?.map(|d| base.join(d));
    let base_iri = take_str(&mut table, "base_iri")?;
    let mut crawl: CrawlConfig = table.try_into().map_err(|e| config_error(path, e))?;
    if let OracleSelector::Mock(fixture) = &crawl.oracle {
        crawl.oracle = OracleSelector::Mock(base.join(fixture));
    }
    Ok((crawl, out_dir, base_iri))
}

/// Defaults, then the config file, then flags.
pub fn resolve(flags: &CrawlFlags) -> Result<Settings, Failure> {
    let (mut crawl, file_out, file_iri) = match &flags.config {
        Some(path) => read_file(path)?,
        None => (CrawlConfig::default(), None, None),
    };
    if let Some(v) = &flags.seed {
        crawl.seed_name = v.clone();
    }
    if let Some(v) = flags.depth {
        crawl.exploration_depth = v;
    }
    if let Some(v) = flags.ft {
        crawl.ft = v;
    }
    if let Some(v) = flags.samples {
        crawl.n_samples = v;
    }
    if let Some(v) = &flags.model {
        crawl.params.model = v.clone();
    }
    if let Some(v) = &flags.oracle {
        crawl.oracle = v.clone();
    }
    if let Some(v) = flags.max_concepts {
        crawl.max_concepts = Some(v);
    }
    if let Some(v) = flags.max_in_flight {
        crawl.max_in_flight = v;
    }
    crawl.validate().map_err(|e| crate::commands::crawl_failure(e, Path::new("")))?;
    Ok(Settings {
        crawl,
        out_dir: flags.out_dir.clone().or(file_out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        base_iri: flags.base_iri.clone().or(file_iri).unwrap_or_else(|| DEFAULT_BASE_IRI.to_string()),
    })
}
