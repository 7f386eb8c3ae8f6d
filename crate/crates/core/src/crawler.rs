//! The construction loop: pick an unexplored concept, ask for its
//! subconcepts, verify and insert each one, checkpoint, repeat.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hierarchy::{normalize_name, ConceptHierarchy, ConceptId, HierarchyDocument, HierarchyError};
use crate::insertion::{Inserter, InsertionError, Rediscovery};
use crate::llm_backend::{
    write_atomic, CompletionParams, CostLedger, HttpBackend, LlmClient, LlmOracle, PriceTable, ResponseCache,
    RetryPolicy, DEFAULT_API_KEY_VAR, DEFAULT_ENDPOINT,
};
use crate::oracle::{FixtureError, MockOracle, NoiseModel, Oracle, OracleContext, OracleError};
use crate::parallel::bounded_map;
use crate::verification::{verify, RejectionRecord, Verdict};

pub use crate::export::stats::CrawlStats;

/// Where answers come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OracleSelector {
    Llm,
    /// Mock oracle reading the ground-truth fixture at this path.
    Mock(PathBuf),
}

impl FromStr for OracleSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "llm" => Ok(OracleSelector::Llm),
            other => match other.strip_prefix("mock:") {
                Some(path) if !path.trim().is_empty() => Ok(OracleSelector::Mock(PathBuf::from(path.trim()))),
                _ => Err(format!("oracle must be \"llm\" or \"mock:<fixture path>\", got {s:?}")),
            },
        }
    }
}

impl TryFrom<String> for OracleSelector {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<OracleSelector> for String {
    fn from(s: OracleSelector) -> String {
        s.to_string()
    }
}

impl fmt::Display for OracleSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSelector::Llm => f.write_str("llm"),
            OracleSelector::Mock(p) => write!(f, "mock:{}", p.display()),
        }
    }
}

/// Exploration depth: a positive bound or unbounded (written `"none"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExplorationDepth(pub Option<usize>);

impl FromStr for ExplorationDepth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(ExplorationDepth(None));
        }
        s.parse::<usize>()
            .map(|n| ExplorationDepth(Some(n)))
            .map_err(|_| format!("exploration depth must be a positive integer or \"none\", got {s:?}"))
    }
}

impl fmt::Display for ExplorationDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("none"),
        }
    }
}

impl Serialize for ExplorationDepth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(n) => s.serialize_u64(n as u64),
            None => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for ExplorationDepth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(n) => Ok(ExplorationDepth(Some(n as usize))),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Model parameters. Deterministic prompts use `temperature`; first-token
/// sampling uses `sampling_temperature`. `top_p` applies to both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub model: String,
    pub temperature: f64,
    pub sampling_temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            sampling_temperature: 2.0,
            top_p: 0.99,
            max_tokens: 512,
        }
    }
}

impl ModelParams {
    pub fn completion(&self) -> CompletionParams {
        CompletionParams {
            model: self.model.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        }
    }
}

/// Settings of the HTTP backend. The API key itself is only ever read from
/// the environment variable named here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub endpoint: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
    pub prompt_price_per_1k: f64,
    pub completion_price_per_1k: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let prices = PriceTable::default();
        let retry = RetryPolicy::default();
        LlmSettings {
            endpoint: DEFAULT_ENDPOINT.into(),
            api_key_env: DEFAULT_API_KEY_VAR.into(),
            timeout_secs: 60,
            max_retries: retry.max_retries,
            retry_base_delay_ms: retry.base_delay_ms,
            prompt_price_per_1k: prices.prompt_per_1k,
            completion_price_per_1k: prices.completion_per_1k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrawlConfig {
    pub seed_name: String,
    pub exploration_depth: ExplorationDepth,
    pub ft: usize,
    pub n_samples: usize,
    pub max_concepts: Option<usize>,
    pub oracle: OracleSelector,
    pub max_in_flight: usize,
    pub params: ModelParams,
    pub llm: LlmSettings,
    /// Noise injected by the mock oracle.
    pub noise: NoiseModel,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        CrawlConfig {
            seed_name: String::new(),
            exploration_depth: ExplorationDepth(None),
            ft: 20,
            n_samples: 100,
            max_concepts: None,
            oracle: OracleSelector::Llm,
            max_in_flight: 8,
            params: ModelParams::default(),
            llm: LlmSettings::default(),
            noise: NoiseModel::noise_free(),
        }
    }
}

impl CrawlConfig {
    pub fn new(seed_name: &str, oracle: OracleSelector) -> Self {
        CrawlConfig { seed_name: seed_name.to_string(), oracle, ..CrawlConfig::default() }
    }

    pub fn validate(&self) -> Result<(), CrawlError> {
        let bad = |msg: String| Err(CrawlError::Config(msg));
        if self.seed_name.trim().is_empty() {
            return bad("seed_name must not be empty".into());
        }
        if self.exploration_depth.0 == Some(0) {
            return bad("exploration_depth must be at least 1 (or \"none\")".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if self.ft == 0 || self.ft > self.n_samples {
            return bad(format!("ft must lie between 1 and n_samples ({}), got {}", self.n_samples, self.ft));
        }
        if self.max_concepts == Some(0) {
            return bad("max_concepts must be at least 1".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        self.params.completion().validate().map_err(CrawlError::Config)?;
        let sampling = CompletionParams { temperature: self.params.sampling_temperature, ..self.params.completion() };
        sampling.validate().map_err(|e| CrawlError::Config(format!("sampling: {e}")))?;
        self.noise.validate().map_err(|e| CrawlError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Builds the oracle named by `config`. `cache_path` backs the response
/// cache of the LLM oracle.
pub fn build_oracle(config: &CrawlConfig, cache_path: Option<&Path>) -> Result<Box<dyn Oracle>, CrawlError> {
    match &config.oracle {
        OracleSelector::Mock(path) => {
            let oracle = MockOracle::from_path(path, config.noise).map_err(|e| match e {
                FixtureError::Io(e) => CrawlError::Config(format!("cannot read fixture {}: {e}", path.display())),
                other => CrawlError::Config(format!("fixture {}: {other}", path.display())),
            })?;
            Ok(Box::new(oracle))
        }
        OracleSelector::Llm => {
            let s = &config.llm;
            let backend = HttpBackend::from_env(&s.endpoint, &s.api_key_env, Duration::from_secs(s.timeout_secs))
                .map_err(|e| CrawlError::Config(e.to_string()))?;
            let cache = match cache_path {
                Some(p) => ResponseCache::open(p).map_err(|e| CrawlError::Checkpoint(CheckpointError::Io(e.to_string())))?,
                None => ResponseCache::in_memory(),
            };
            let client = LlmClient::new(Arc::new(backend))
                .with_cache(cache)
                .with_prices(PriceTable { prompt_per_1k: s.prompt_price_per_1k, completion_per_1k: s.completion_price_per_1k })
                .with_retry(RetryPolicy { max_retries: s.max_retries, base_delay_ms: s.retry_base_delay_ms, ..RetryPolicy::default() })
                .with_max_in_flight(config.max_in_flight);
            Ok(Box::new(
                LlmOracle::new(client, config.params.completion()).with_sampling(config.params.sampling_temperature, config.params.top_p),
            ))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(String),
    #[error("checkpoint is not valid JSON: {0}")]
    Json(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch; the file is corrupted or was edited")]
    Checksum,
    #[error("checkpoint content is inconsistent: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrawlError {
    #[error("configuration error: {0}")]
    Config(String),
    /// The oracle failed for good. The last checkpoint, if any, is intact.
    #[error("aborted: {0}")]
    Oracle(OracleError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<InsertionError> for CrawlError {
    fn from(e: InsertionError) -> Self {
        match e {
            InsertionError::Hierarchy(h) => CrawlError::Hierarchy(h),
            InsertionError::Oracle(o) => CrawlError::Oracle(o),
        }
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything needed to continue a crawl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlState {
    pub config: CrawlConfig,
    pub hierarchy: HierarchyDocument,
    /// Unexplored concepts within the depth limit, in exploration order.
    pub frontier: Vec<ConceptId>,
    /// Superconcept each concept was first listed under.
    pub discovered_from: BTreeMap<ConceptId, ConceptId>,
    /// Direct edges `[child, parent]` that came from listings.
    pub listed_edges: Vec<[ConceptId; 2]>,
    pub rejections: Vec<RejectionRecord>,
    /// Oracle usage up to this checkpoint.
    pub ledger: CostLedger,
    pub explorations: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    checksum: String,
    state: serde_json::Value,
}

fn checksum(state: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(state.to_string().as_bytes()))
}

impl CrawlState {
    pub fn to_json(&self) -> Result<String, CheckpointError> {
        let state = serde_json::to_value(self).map_err(|e| CheckpointError::Json(e.to_string()))?;
        let file = CheckpointFile { version: CHECKPOINT_FORMAT_VERSION, checksum: checksum(&state), state };
        serde_json::to_string_pretty(&file).map_err(|e| CheckpointError::Json(e.to_string()))
    }

    /// Parses and fully validates a checkpoint; nothing partial is returned.
    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::Json(e.to_string()))?;
        let version = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| CheckpointError::Invalid("missing version".into()))?;
        if version != CHECKPOINT_FORMAT_VERSION as u64 {
            return Err(CheckpointError::Version { found: version as u32, expected: CHECKPOINT_FORMAT_VERSION });
        }
        let file: CheckpointFile = serde_json::from_value(raw).map_err(|e| CheckpointError::Json(e.to_string()))?;
        if checksum(&file.state) != file.checksum {
            return Err(CheckpointError::Checksum);
        }
        let state: CrawlState = serde_json::from_value(file.state).map_err(|e| CheckpointError::Json(e.to_string()))?;
        ConceptHierarchy::from_document(&state.hierarchy).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, self.to_json()?.as_bytes()).map_err(|e| CheckpointError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
        CrawlState::from_json(&text)
    }
}

/// What one exploration step did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Explored { concept: ConceptId, listed: usize, inserted: usize, rejected: usize },
    /// Nothing left to explore, or the concept cap was reached.
    Finished,
}

/// Drives the construction over one oracle.
pub struct Crawler<'a> {
    config: CrawlConfig,
    oracle: &'a dyn Oracle,
    hierarchy: ConceptHierarchy,
    discovered_from: BTreeMap<ConceptId, ConceptId>,
    listed_edges: BTreeSet<(ConceptId, ConceptId)>,
    rejections: Vec<RejectionRecord>,
    /// Usage recorded by earlier sessions of this crawl.
    base_ledger: CostLedger,
    explorations: usize,
    capped: bool,
    checkpoint_path: Option<PathBuf>,
    rejection_log: Option<PathBuf>,
}

impl<'a> Crawler<'a> {
    pub fn new(config: CrawlConfig, oracle: &'a dyn Oracle) -> Result<Self, CrawlError> {
        config.validate()?;
        let hierarchy = ConceptHierarchy::new(&config.seed_name)?;
        Ok(Crawler {
            config,
            oracle,
            hierarchy,
            discovered_from: BTreeMap::new(),
            listed_edges: BTreeSet::new(),
            rejections: Vec::new(),
            base_ledger: CostLedger::default(),
            explorations: 0,
            capped: false,
            checkpoint_path: None,
            rejection_log: None,
        })
    }

    pub fn resume(state: CrawlState, oracle: &'a dyn Oracle) -> Result<Self, CrawlError> {
        state.config.validate()?;
        let hierarchy = ConceptHierarchy::from_document(&state.hierarchy)?;
        let capped = state.config.max_concepts.is_some_and(|m| hierarchy.len() >= m);
        Ok(Crawler {
            config: state.config,
            oracle,
            hierarchy,
            discovered_from: state.discovered_from,
            listed_edges: state.listed_edges.into_iter().map(|[c, p]| (c, p)).collect(),
            rejections: state.rejections,
            base_ledger: state.ledger,
            explorations: state.explorations,
            capped,
            checkpoint_path: None,
            rejection_log: None,
        })
    }

    /// Writes a checkpoint to `path` after every completed exploration.
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    /// Appends one JSON line per rejected candidate to `path`.
    pub fn with_rejection_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.rejection_log = Some(path.into());
        self
    }

    pub fn config(&self) -> &CrawlConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &ConceptHierarchy {
        &self.hierarchy
    }

    pub fn rejections(&self) -> &[RejectionRecord] {
        &self.rejections
    }

    pub fn explorations(&self) -> usize {
        self.explorations
    }

    /// Usage of this crawl across all sessions.
    pub fn ledger(&self) -> CostLedger {
        self.base_ledger.combined(&self.oracle.usage())
    }

    pub fn state(&self) -> CrawlState {
        let mut listed: Vec<[ConceptId; 2]> = self.listed_edges.iter().map(|&(c, p)| [c, p]).collect();
        listed.sort();
        CrawlState {
            config: self.config.clone(),
            hierarchy: self.hierarchy.to_document(),
            frontier: self.hierarchy.frontier(self.config.exploration_depth.0),
            discovered_from: self.discovered_from.clone(),
            listed_edges: listed,
            rejections: self.rejections.clone(),
            ledger: self.ledger(),
            explorations: self.explorations,
        }
    }

    pub fn stats(&self) -> CrawlStats {
        let listed: BTreeSet<(ConceptId, ConceptId)> = self.listed_edges.clone();
        CrawlStats::compute(
            &self.hierarchy,
            self.config.exploration_depth.0,
            self.config.ft,
            &self.ledger(),
            &self.rejections,
            &listed,
        )
    }

    fn is_full(&self) -> bool {
        self.config.max_concepts.is_some_and(|m| self.hierarchy.len() >= m)
    }

    fn context_for(&self, id: ConceptId) -> OracleContext {
        let h = &self.hierarchy;
        let mut ctx = OracleContext::new(&self.config.seed_name);
        let parent = self.discovered_from.get(&id).copied().filter(|p| h.contains(*p));
        ctx.parent_name = parent.and_then(|p| h.name_of(p).ok()).map(str::to_string);
        for c in [Some(h.seed()), parent, Some(id)].into_iter().flatten() {
            if let Some(concept) = h.get(c) {
                if let Some(d) = &concept.description {
                    ctx.descriptions.insert(concept.canonical_name.clone(), d.clone());
                }
            }
        }
        ctx
    }

    fn abort(e: OracleError) -> CrawlError {
        log::error!("oracle failure, aborting: {e}");
        CrawlError::Oracle(e)
    }

    /// Explores the next concept of the frontier.
    pub fn step(&mut self) -> Result<Step, CrawlError> {
        if self.capped || self.is_full() {
            self.capped = true;
            return Ok(Step::Finished);
        }
        let Some(current) = self.hierarchy.next_unexplored(self.config.exploration_depth.0) else {
            return Ok(Step::Finished);
        };
        let name = self.hierarchy.name_of(current)?.to_string();
        let ctx = self.context_for(current);
        log::info!("exploring {name:?} (depth {})", self.hierarchy.depth_of(current)?);

        let mut listed = 0;
        let mut inserted = 0;
        let mut rejected = 0;
        if self.oracle.has_subconcepts(&ctx, &name).map_err(Self::abort)? {
            let raw = self
                .oracle
                .list_subconcepts(&ctx, &name, self.config.ft, self.config.n_samples)
                .map_err(Self::abort)?;
            let mut seen = BTreeSet::from([normalize_name(&name)]);
            let candidates: Vec<String> = raw.into_iter().filter(|n| seen.insert(normalize_name(n))).collect();
            listed = candidates.len();

            let fresh: Vec<String> =
                candidates.iter().filter(|n| self.hierarchy.find_by_name(n).is_none()).cloned().collect();
            let descriptions = if fresh.is_empty() {
                BTreeMap::new()
            } else {
                self.oracle.describe(&ctx, &name, &fresh).map_err(Self::abort)?
            };

            let oracle = self.oracle;
            let verdicts: Vec<Verdict> = bounded_map(&fresh, self.config.max_in_flight, |cand| {
                let desc = descriptions.get(cand).map(String::as_str);
                verify(oracle, &ctx, cand, &name, desc)
            });
            let mut verdicts: BTreeMap<&str, Verdict> =
                fresh.iter().map(String::as_str).zip(verdicts).collect();
            if let Some(e) = verdicts.values().find_map(|v| v.transport_error.clone()) {
                return Err(Self::abort(OracleError::Transport(e)));
            }

            let inserter = Inserter::new(self.oracle, self.config.max_in_flight);
            for cand in &candidates {
                if self.is_full() {
                    log::info!("concept cap reached");
                    self.capped = true;
                    break;
                }
                if let Some(existing) = self.hierarchy.find_by_name(cand) {
                    if !verdicts.contains_key(cand.as_str()) {
                        self.rediscover(&inserter, &ctx, existing, current)?;
                        continue;
                    }
                }
                let Some(verdict) = verdicts.remove(cand.as_str()) else { continue };
                let Some(accepted) = verdict.accepted_name(cand).map(str::to_string) else {
                    rejected += 1;
                    self.reject(cand, &name, &verdict);
                    continue;
                };
                if let Some(existing) = self.hierarchy.find_by_name(&accepted) {
                    self.rediscover(&inserter, &ctx, existing, current)?;
                    continue;
                }
                let desc = descriptions.get(cand).map(String::as_str).filter(|d| !d.trim().is_empty());
                let placement = inserter.insert(&ctx, &mut self.hierarchy, &accepted, desc, current)?;
                let id = placement.id.expect("insert places the concept");
                if placement.synonym_of.is_none() {
                    inserted += 1;
                    self.discovered_from.insert(id, current);
                }
                self.listed_edges.insert((id, current));
                self.sync_after_merge();
            }
        }
        if self.hierarchy.contains(current) {
            self.hierarchy.mark_explored(current)?;
        }
        self.explorations += 1;
        self.sync_after_merge();
        if let Some(path) = &self.checkpoint_path {
            self.state().save(path)?;
        }
        Ok(Step::Explored { concept: current, listed, inserted, rejected })
    }

    fn rediscover(
        &mut self,
        inserter: &Inserter<'_>,
        ctx: &OracleContext,
        existing: ConceptId,
        current: ConceptId,
    ) -> Result<(), CrawlError> {
        match inserter.rediscover(ctx, &mut self.hierarchy, existing, current)? {
            Rediscovery::EdgeAdded | Rediscovery::Implied => {
                self.listed_edges.insert((existing, current));
            }
            Rediscovery::Merged(_) => self.sync_after_merge(),
            Rediscovery::Dropped => {}
        }
        Ok(())
    }

    fn reject(&mut self, name: &str, parent: &str, verdict: &Verdict) {
        let Some(record) = RejectionRecord::new(name, parent, verdict) else { return };
        if let Some(path) = &self.rejection_log {
            if let Err(e) = append_json_line(path, &record) {
                log::warn!("cannot write rejection log: {e}");
            }
        }
        self.rejections.push(record);
    }

    // Merges can retire ids; point bookkeeping at the surviving concepts.
    fn sync_after_merge(&mut self) {
        let h = &self.hierarchy;
        if self.discovered_from.iter().all(|(&c, &p)| h.contains(c) && h.contains(p))
            && self.listed_edges.iter().all(|&(c, p)| h.contains(c) && h.contains(p))
        {
            return;
        }
        let mut from = BTreeMap::new();
        for (&c, &p) in &self.discovered_from {
            if let (Some(c), Some(p)) = (h.resolve(c), h.resolve(p)) {
                if c != p {
                    from.entry(c).or_insert(p);
                }
            }
        }
        self.discovered_from = from;
        self.listed_edges = self
            .listed_edges
            .iter()
            .filter_map(|&(c, p)| Some((h.resolve(c)?, h.resolve(p)?)))
            .filter(|(c, p)| c != p)
            .collect();
    }

    /// Explores until the frontier is empty or the cap is reached.
    pub fn run(&mut self) -> Result<CrawlStats, CrawlError> {
        self.run_for(usize::MAX)?;
        self.oracle.flush().map_err(Self::abort)?;
        Ok(self.stats())
    }

    /// Explores at most `limit` concepts. Returns whether the crawl is done.
    pub fn run_for(&mut self, limit: usize) -> Result<bool, CrawlError> {
        for _ in 0..limit {
            if self.step()? == Step::Finished {
                return Ok(true);
            }
        }
        Ok(self.hierarchy.next_unexplored(self.config.exploration_depth.0).is_none() || self.capped)
    }
}

fn append_json_line<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(value).map_err(io::Error::other)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{GroundTruthTaxonomy, MockOracle, NoiseModel};

    fn excerpt() -> GroundTruthTaxonomy {
        serde_json::from_str(include_str!("../fixtures/goats_excerpt.json")).unwrap()
    }

    fn config() -> CrawlConfig {
        CrawlConfig::new("Goats", OracleSelector::Mock(PathBuf::from("fixtures/goats_excerpt.json")))
    }

    fn noisy() -> NoiseModel {
        NoiseModel {
            rng_seed: 7,
            p_hallucinated_edge: 0.05,
            p_missing_edge: 0.1,
            p_attribute_inflation: 0.2,
            ..NoiseModel::default()
        }
    }

    #[test]
    fn noise_free_crawl_rebuilds_the_goats_excerpt() {
        let truth = excerpt();
        let oracle = MockOracle::noise_free(&truth).unwrap();
        let mut crawler = Crawler::new(config(), &oracle).unwrap();
        let stats = crawler.run().unwrap();
        let h = crawler.hierarchy();
        h.check_invariants().unwrap();
        assert_eq!(stats.n_c, 14);
        assert_eq!(stats.n_sub, 14);
        let edges: BTreeSet<(String, String)> = crate::export::named_edges(h);
        let expected: BTreeSet<(String, String)> = truth.edges.iter().map(|[c, p]| (c.clone(), p.clone())).collect();
        assert_eq!(edges, expected);
        assert_eq!(stats.outdegree_histogram.iter().sum::<usize>(), 14);
        assert!(crawler.rejections().is_empty());
    }

    #[test]
    fn seed_without_subconcepts_stops_at_once() {
        let truth = GroundTruthTaxonomy { root: "Goats".into(), ..excerpt() };
        let truth = GroundTruthTaxonomy { edges: vec![], ..truth };
        let oracle = MockOracle::noise_free(&truth).unwrap();
        let mut crawler = Crawler::new(config(), &oracle).unwrap();
        let stats = crawler.run().unwrap();
        assert_eq!((stats.n_c, stats.n_sub), (1, 0));
        assert_eq!(stats.requests, 1);
    }

    #[test]
    fn depth_cutoff_limits_exploration() {
        let truth = excerpt();
        let oracle = MockOracle::noise_free(&truth).unwrap();
        let mut cfg = config();
        cfg.exploration_depth = ExplorationDepth(Some(1));
        let mut crawler = Crawler::new(cfg, &oracle).unwrap();
        let stats = crawler.run().unwrap();
        assert_eq!(stats.n_c, 6);
        assert_eq!(crawler.explorations(), 1);
    }

    #[test]
    fn concept_cap_is_respected() {
        let truth = excerpt();
        let oracle = MockOracle::noise_free(&truth).unwrap();
        let mut cfg = config();
        cfg.max_concepts = Some(4);
        let mut crawler = Crawler::new(cfg, &oracle).unwrap();
        let stats = crawler.run().unwrap();
        assert_eq!(stats.n_c, 4);
    }

    #[test]
    fn invalid_configs_are_refused() {
        let mut cfg = config();
        cfg.ft = 0;
        assert!(matches!(cfg.validate(), Err(CrawlError::Config(_))));
        let mut cfg = config();
        cfg.ft = cfg.n_samples + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = config();
        cfg.exploration_depth = ExplorationDepth(Some(0));
        assert!(cfg.validate().is_err());
        let mut cfg = config();
        cfg.seed_name = "  ".into();
        assert!(cfg.validate().is_err());
        assert!(config().validate().is_ok());
    }

    #[test]
    fn config_text_forms() {
        assert_eq!("none".parse::<ExplorationDepth>().unwrap(), ExplorationDepth(None));
        assert_eq!("3".parse::<ExplorationDepth>().unwrap(), ExplorationDepth(Some(3)));
        assert!("x".parse::<ExplorationDepth>().is_err());
        assert_eq!("llm".parse::<OracleSelector>().unwrap(), OracleSelector::Llm);
        assert_eq!(
            "mock:a/b.json".parse::<OracleSelector>().unwrap(),
            OracleSelector::Mock(PathBuf::from("a/b.json"))
        );
        let json = serde_json::to_string(&config()).unwrap();
        let back: CrawlConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config());
    }

    #[test]
    fn checkpoint_round_trip_and_integrity() {
        let truth = excerpt();
        let oracle = MockOracle::noise_free(&truth).unwrap();
        let mut crawler = Crawler::new(config(), &oracle).unwrap();
        crawler.run_for(2).unwrap();
        let state = crawler.state();
        let text = state.to_json().unwrap();
        assert_eq!(CrawlState::from_json(&text).unwrap(), state);

        let tampered = text.replacen("Dairy Goats", "Dairy Coats", 1);
        assert!(matches!(CrawlState::from_json(&tampered), Err(CheckpointError::Checksum)));

        let mut raw: serde_json::Value = serde_json::from_str(&text).unwrap();
        raw["version"] = serde_json::json!(CHECKPOINT_FORMAT_VERSION + 1);
        assert!(matches!(
            CrawlState::from_json(&raw.to_string()),
            Err(CheckpointError::Version { expected: CHECKPOINT_FORMAT_VERSION, .. })
        ));
        assert!(matches!(CrawlState::from_json(&text[..text.len() / 2]), Err(CheckpointError::Json(_))));
    }

    #[test]
    fn checkpoint_file_is_written_after_each_exploration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let truth = excerpt();
        let oracle = MockOracle::noise_free(&truth).unwrap();
        let mut crawler = Crawler::new(config(), &oracle).unwrap().with_checkpoint_path(&path);
        crawler.step().unwrap();
        let loaded = CrawlState::load(&path).unwrap();
        assert_eq!(loaded.explorations, 1);
        assert_eq!(loaded, crawler.state());
    }

    #[test]
    fn resumed_crawl_matches_uninterrupted_one() {
        let truth = excerpt();
        let mut cfg = config();
        cfg.noise = noisy();
        let whole_oracle = MockOracle::new(&truth, noisy()).unwrap();
        let mut whole = Crawler::new(cfg.clone(), &whole_oracle).unwrap();
        whole.run().unwrap();

        for k in [1, 3, 5] {
            let first_oracle = MockOracle::new(&truth, noisy()).unwrap();
            let mut first = Crawler::new(cfg.clone(), &first_oracle).unwrap();
            first.run_for(k).unwrap();
            let state = CrawlState::from_json(&first.state().to_json().unwrap()).unwrap();
            let second_oracle = MockOracle::new(&truth, noisy()).unwrap();
            let mut second = Crawler::resume(state, &second_oracle).unwrap();
            second.run().unwrap();
            assert_eq!(second.hierarchy().to_document(), whole.hierarchy().to_document(), "k = {k}");
            assert_eq!(second.rejections(), whole.rejections());
            assert_eq!(second.ledger().requests, whole.ledger().requests);
            assert_eq!(second.stats(), whole.stats());
        }
    }

    #[test]
    fn wrong_relations_are_logged() {
        let truth: GroundTruthTaxonomy = serde_json::from_str(include_str!("../fixtures/wrong_relations.json")).unwrap();
        let oracle = MockOracle::noise_free(&truth).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("rejected.jsonl");
        let cfg = CrawlConfig::new("Things", OracleSelector::Mock(PathBuf::from("x")));
        let mut crawler = Crawler::new(cfg, &oracle).unwrap().with_rejection_log(&log);
        let stats = crawler.run().unwrap();
        let h = crawler.hierarchy();
        assert!(h.find_by_name("Yale University").is_none());
        assert!(h.find_by_name("Toes").is_none());
        assert!(h.find_by_name("Flat Feet").is_some());
        let lines = fs::read_to_string(&log).unwrap();
        assert_eq!(lines.lines().count(), crawler.rejections().len());
        assert!(stats.n_d >= 2);
        h.check_invariants().unwrap();
    }
}
