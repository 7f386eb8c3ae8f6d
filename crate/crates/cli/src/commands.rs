use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use taxocrawl::crawler::{build_oracle, CrawlConfig, CrawlError, CrawlState, Crawler, OracleSelector};
use taxocrawl::export::{to_dot, to_owl_rdfxml, CrawlStats};
use taxocrawl::hierarchy::ConceptHierarchy;
use taxocrawl::llm_backend::write_atomic;
use taxocrawl::oracle::{GroundTruthTaxonomy, Oracle};

use crate::config::Settings;
use crate::Failure;

pub const CHECKPOINT: &str = "checkpoint.json";
pub const OWL: &str = "hierarchy.owl";
pub const DOT: &str = "hierarchy.dot";
pub const STATS_JSON: &str = "stats.json";
pub const STATS_TXT: &str = "stats.txt";
pub const QUERIES: &str = "queries.jsonl";
pub const REJECTED: &str = "rejected.jsonl";
pub const CACHE: &str = "cache.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Owl,
    Dot,
    Json,
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(|e| io_failure(path, e))
}

fn open_oracle(config: &CrawlConfig, out_dir: &Path) -> Result<Box<dyn Oracle>, Failure> {
    let cache = matches!(config.oracle, OracleSelector::Llm).then(|| out_dir.join(CACHE));
    let oracle = build_oracle(config, cache.as_deref()).map_err(|e| crawl_failure(e, out_dir))?;
    let log = out_dir.join(QUERIES);
    oracle.query_log().attach_file(&log).map_err(|e| io_failure(&log, e))?;
    let rejected = out_dir.join(REJECTED);
    fs::OpenOptions::new().create(true).append(true).open(&rejected).map_err(|e| io_failure(&rejected, e))?;
    Ok(oracle)
}

pub fn crawl_failure(e: CrawlError, out_dir: &Path) -> Failure {
    match e {
        CrawlError::Config(msg) => Failure::Config(msg),
        CrawlError::Oracle(err) => {
            let checkpoint = out_dir.join(CHECKPOINT);
            if checkpoint.exists() {
                Failure::Aborted(format!("{err}; resume from {}", checkpoint.display()))
            } else {
                Failure::Oracle(err.to_string())
            }
        }
        CrawlError::Checkpoint(err) => Failure::Checkpoint(err.to_string()),
        CrawlError::Hierarchy(err) => Failure::Io(format!("internal error: {err}")),
    }
}

fn drive(mut crawler: Crawler<'_>, out_dir: &Path, base_iri: &str) -> Result<CrawlStats, Failure> {
    let stats = crawler.run().map_err(|e| crawl_failure(e, out_dir))?;
    crawler.state().save(&out_dir.join(CHECKPOINT)).map_err(|e| Failure::Checkpoint(e.to_string()))?;
    write_outputs(out_dir, crawler.hierarchy(), &stats, base_iri)?;
    Ok(stats)
}

pub fn write_outputs(out_dir: &Path, h: &ConceptHierarchy, stats: &CrawlStats, base_iri: &str) -> Result<(), Failure> {
    let owl = to_owl_rdfxml(h, base_iri).map_err(|e| Failure::Io(e.to_string()))?;
    write_file(&out_dir.join(OWL), &owl)?;
    write_file(&out_dir.join(DOT), &to_dot(h))?;
    let json = serde_json::to_string_pretty(stats).map_err(|e| Failure::Io(e.to_string()))?;
    write_file(&out_dir.join(STATS_JSON), &(json + "\n"))?;
    write_file(&out_dir.join(STATS_TXT), &stats.to_text())
}

/// Starts a fresh crawl. Logs from an earlier run in the same directory are
/// replaced.
pub fn crawl(settings: &Settings) -> Result<CrawlStats, Failure> {
    let out = &settings.out_dir;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    for stale in [CHECKPOINT, QUERIES, REJECTED] {
        let path = out.join(stale);
        if path.exists() {
            fs::remove_file(&path).map_err(|e| io_failure(&path, e))?;
        }
    }
    let oracle = open_oracle(&settings.crawl, out)?;
    let crawler = Crawler::new(settings.crawl.clone(), oracle.as_ref())
        .map_err(|e| crawl_failure(e, out))?
        .with_checkpoint_path(out.join(CHECKPOINT))
        .with_rejection_log(out.join(REJECTED));
    drive(crawler, out, &settings.base_iri)
}

/// `path` is a checkpoint file or the directory holding one.
pub fn checkpoint_location(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(CHECKPOINT), path.to_path_buf())
    } else {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
        (path.to_path_buf(), dir)
    }
}

pub fn load_state(path: &Path) -> Result<CrawlState, Failure> {
    let (file, _) = checkpoint_location(path);
    CrawlState::load(&file).map_err(|e| Failure::Checkpoint(e.to_string()))
}

pub fn resume(path: &Path, base_iri: &str) -> Result<CrawlStats, Failure> {
    let (file, out) = checkpoint_location(path);
    let state = load_state(&file)?;
    let oracle = open_oracle(&state.config, &out)?;
    let crawler = Crawler::resume(state, oracle.as_ref())
        .map_err(|e| crawl_failure(e, &out))?
        .with_checkpoint_path(&file)
        .with_rejection_log(out.join(REJECTED));
    drive(crawler, &out, base_iri)
}

fn hierarchy_of(state: &CrawlState) -> Result<ConceptHierarchy, Failure> {
    ConceptHierarchy::from_document(&state.hierarchy).map_err(|e| Failure::Checkpoint(e.to_string()))
}

pub fn export(path: &Path, format: Format, base_iri: &str) -> Result<String, Failure> {
    let state = load_state(path)?;
    let h = hierarchy_of(&state)?;
    Ok(match format {
        Format::Owl => to_owl_rdfxml(&h, base_iri).map_err(|e| Failure::Io(e.to_string()))?,
        Format::Dot => to_dot(&h),
        Format::Json => serde_json::to_string_pretty(&state.hierarchy).map_err(|e| Failure::Io(e.to_string()))? + "\n",
    })
}

pub fn stats(path: &Path) -> Result<CrawlStats, Failure> {
    let state = load_state(path)?;
    let h = hierarchy_of(&state)?;
    let listed = state.listed_edges.iter().map(|&[c, p]| (c, p)).collect();
    Ok(CrawlStats::compute(
        &h,
        state.config.exploration_depth.0,
        state.config.ft,
        &state.ledger,
        &state.rejections,
        &listed,
    ))
}

pub fn validate_fixture(path: &Path) -> Result<String, Failure> {
    let truth = GroundTruthTaxonomy::from_path(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    truth.validate().map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut concepts: Vec<&str> = std::iter::once(truth.root.as_str())
        .chain(truth.edges.iter().flatten().map(String::as_str))
        .collect();
    concepts.sort_unstable();
    concepts.dedup();
    Ok(format!(
        "{}: root {:?}, {} concepts, {} edges, {} synonym pairs\n",
        path.display(),
        truth.root,
        concepts.len(),
        truth.edges.len(),
        truth.synonyms.len()
    ))
}

pub fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => write_file(path, text),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Io(e.to_string())),
    }
}
