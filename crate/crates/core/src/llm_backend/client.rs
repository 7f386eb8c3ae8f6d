//! Chat-completion client: wire types, response cache, retries, cost ledger.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{CostLedger, PriceTable, TemplateName};
use crate::oracle::{OracleError, ProbePhase, QueryLog, QueryRecord};
use crate::parallel::{bounded_map, Semaphore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} is outside [0, 2]", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} is outside (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if self.model.trim().is_empty() {
            return Err("model identifier is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body of the chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn single_turn(prompt: &str, params: &CompletionParams) -> Self {
        ChatRequest {
            model: params.model.clone(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: network trouble, rate limits, server errors.
    #[error("{0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
}

/// Something that answers one chat-completion request.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 5, base_delay_ms: 500, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CachedReply {
    reply: String,
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Replies to deterministic (temperature 0) requests, keyed by a content
/// hash of prompt and parameters. Optionally backed by a JSON file.
#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: HashMap<String, CachedReply>,
    path: Option<PathBuf>,
    dirty: bool,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    /// Opens the cache file at `path`; a missing file yields an empty cache.
    pub fn open(path: &Path) -> io::Result<Self> {
        let entries = match fs::read_to_string(path) {
            Ok(text) => {
                let map: BTreeMap<String, CachedReply> =
                    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                map.into_iter().collect()
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(e),
        };
        Ok(ResponseCache { entries, path: Some(path.to_path_buf()), dirty: false })
    }

    pub fn key(prompt: &str, params: &CompletionParams) -> String {
        let payload = serde_json::to_vec(&(prompt, params)).expect("cache key serializes");
        hex::encode(Sha256::digest(payload))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the cache atomically if it changed since the last save.
    pub fn save(&mut self) -> io::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if !self.dirty {
            return Ok(());
        }
        let sorted: BTreeMap<&String, &CachedReply> = self.entries.iter().collect();
        let json = serde_json::to_vec_pretty(&sorted).map_err(io::Error::other)?;
        write_atomic(path, &json)?;
        self.dirty = false;
        Ok(())
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Look up and store (only applies at temperature 0).
    Use,
    /// Skip the lookup but store the fresh reply.
    Refresh,
    Off,
}

/// One logical completion request plus the metadata recorded in the log.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub template: TemplateName,
    pub prompt: &'a str,
    pub params: &'a CompletionParams,
    pub args: &'a [&'a str],
    pub phase: Option<ProbePhase>,
    pub cache: CacheMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cached: bool,
}

/// Wraps a [`ChatBackend`] with caching, bounded retries, an in-flight cap,
/// cost accounting and query logging.
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    cache: Mutex<ResponseCache>,
    ledger: Mutex<CostLedger>,
    prices: PriceTable,
    retry: RetryPolicy,
    in_flight: Semaphore,
    max_in_flight: usize,
    log: QueryLog,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("prices", &self.prices)
            .field("retry", &self.retry)
            .field("max_in_flight", &self.max_in_flight)
            .finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        LlmClient {
            backend,
            cache: Mutex::new(ResponseCache::in_memory()),
            ledger: Mutex::new(CostLedger::default()),
            prices: PriceTable::default(),
            retry: RetryPolicy::default(),
            in_flight: Semaphore::new(8),
            max_in_flight: 8,
            log: QueryLog::new(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Mutex::new(cache);
        self
    }

    pub fn with_prices(mut self, prices: PriceTable) -> Self {
        self.prices = prices;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.max_in_flight = limit.max(1);
        self.in_flight = Semaphore::new(self.max_in_flight);
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn ledger(&self) -> CostLedger {
        *self.ledger.lock().expect("ledger poisoned")
    }

    pub fn query_log(&self) -> &QueryLog {
        &self.log
    }

    pub fn save_cache(&self) -> io::Result<()> {
        self.cache.lock().expect("cache poisoned").save()
    }

    pub fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, OracleError> {
        req.params.validate().map_err(OracleError::InvalidQuery)?;
        let cacheable = req.params.temperature == 0.0 && req.cache != CacheMode::Off;
        let key = cacheable.then(|| ResponseCache::key(req.prompt, req.params));

        if let (Some(key), CacheMode::Use) = (&key, req.cache) {
            let hit = self.cache.lock().expect("cache poisoned").entries.get(key).cloned();
            if let Some(hit) = hit {
                self.ledger.lock().expect("ledger poisoned").cache_hits += 1;
                let mut rec = self.record(req, hit.reply.clone());
                rec.cached = true;
                self.log.record(rec);
                return Ok(Completion {
                    text: hit.reply,
                    prompt_tokens: hit.prompt_tokens,
                    completion_tokens: hit.completion_tokens,
                    cached: true,
                });
            }
        }

        let request = ChatRequest::single_turn(req.prompt, req.params);
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            let result = {
                let _permit = self.in_flight.acquire();
                self.backend.send(&request)
            };
            let latency_ms = started.elapsed().as_millis() as u64;
            self.ledger.lock().expect("ledger poisoned").requests += 1;
            match result {
                Ok(resp) => {
                    self.ledger.lock().expect("ledger poisoned").charge(
                        resp.prompt_tokens,
                        resp.completion_tokens,
                        &self.prices,
                    );
                    let mut rec = self.record(req, resp.content.clone());
                    rec.prompt_tokens = resp.prompt_tokens;
                    rec.completion_tokens = resp.completion_tokens;
                    rec.latency_ms = latency_ms;
                    self.log.record(rec);
                    if let Some(key) = key {
                        let mut cache = self.cache.lock().expect("cache poisoned");
                        cache.entries.insert(
                            key,
                            CachedReply {
                                reply: resp.content.clone(),
                                prompt_tokens: resp.prompt_tokens,
                                completion_tokens: resp.completion_tokens,
                            },
                        );
                        cache.dirty = true;
                    }
                    return Ok(Completion {
                        text: resp.content,
                        prompt_tokens: resp.prompt_tokens,
                        completion_tokens: resp.completion_tokens,
                        cached: false,
                    });
                }
                Err(err) => {
                    let mut rec = self.record(req, String::new());
                    rec.latency_ms = latency_ms;
                    rec.error = Some(err.to_string());
                    self.log.record(rec);
                    match err {
                        BackendError::Fatal(msg) => return Err(OracleError::Backend(msg)),
                        BackendError::Retryable(msg) if attempt >= self.retry.max_retries => {
                            return Err(OracleError::Transport(format!(
                                "{msg} (gave up after {} attempts)",
                                attempt + 1
                            )))
                        }
                        BackendError::Retryable(msg) => {
                            log::debug!("{} attempt {} failed: {msg}", req.template, attempt + 1);
                            thread::sleep(self.retry.delay(attempt));
                            attempt += 1;
                        }
                    }
                }
            }
        }
    }

    /// Samples only the first token of `prompt`, `samples` times, and counts
    /// the whitespace-trimmed tokens. Samples that fail after retries are
    /// dropped with a warning.
    pub fn sample_first_tokens(
        &self,
        template: TemplateName,
        prompt: &str,
        params: &CompletionParams,
        samples: usize,
        args: &[&str],
    ) -> Result<BTreeMap<String, usize>, OracleError> {
        if samples == 0 {
            return Err(OracleError::InvalidQuery("at least one sample is required".into()));
        }
        let params = CompletionParams { max_tokens: 1, ..params.clone() };
        let draws: Vec<usize> = (0..samples).collect();
        let results = bounded_map(&draws, self.max_in_flight, |_| {
            self.complete(&CompletionRequest {
                template,
                prompt,
                params: &params,
                args,
                phase: None,
                cache: CacheMode::Off,
            })
        });
        let mut freq = BTreeMap::new();
        let mut dropped = 0;
        let mut last_err = None;
        for r in results {
            match r {
                Ok(c) => {
                    let token = c.text.trim();
                    if !token.is_empty() {
                        *freq.entry(token.to_string()).or_insert(0) += 1;
                    }
                }
                Err(e) => {
                    dropped += 1;
                    last_err = Some(e);
                }
            }
        }
        if dropped > 0 {
            log::warn!("{dropped} of {samples} first-token samples failed and were dropped");
        }
        match last_err {
            Some(e) if dropped == samples => Err(e),
            _ => Ok(freq),
        }
    }

    fn record(&self, req: &CompletionRequest<'_>, reply: String) -> QueryRecord {
        let mut rec = QueryRecord::new(req.template, req.prompt.to_string(), reply);
        rec.params = Some(req.params.clone());
        rec.args = req.args.iter().map(|a| a.to_string()).collect();
        rec.phase = req.phase;
        rec
    }
}

/// Tokens whose count reaches `threshold`, most frequent first.
pub fn tokens_passing(freq: &BTreeMap<String, usize>, threshold: usize) -> Vec<String> {
    let mut passing: Vec<(&String, usize)> = freq.iter().filter(|(_, &n)| n >= threshold).map(|(t, &n)| (t, n)).collect();
    passing.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    passing.into_iter().map(|(t, _)| t.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Echo {
        calls: AtomicUsize,
        fail_first: usize,
        reply: String,
    }

    impl ChatBackend for Echo {
        fn send(&self, _request: &ChatRequest) -> Result<ChatResponse, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(BackendError::Retryable("503 service unavailable".into()));
            }
            Ok(ChatResponse { content: self.reply.clone(), prompt_tokens: 100, completion_tokens: 10 })
        }
    }

    fn params(temperature: f64) -> CompletionParams {
        CompletionParams { model: "gpt-3.5-turbo".into(), temperature, top_p: 0.99, max_tokens: 16 }
    }

    fn request<'a>(prompt: &'a str, params: &'a CompletionParams) -> CompletionRequest<'a> {
        CompletionRequest { template: TemplateName::VerifySeed, prompt, params, args: &[], phase: None, cache: CacheMode::Use }
    }

    fn no_wait() -> RetryPolicy {
        RetryPolicy { max_retries: 5, base_delay_ms: 0, max_delay_ms: 0 }
    }

    #[test]
    fn deterministic_requests_are_cached() {
        let backend = Arc::new(Echo { calls: AtomicUsize::new(0), fail_first: 0, reply: "Yes.".into() });
        let client = LlmClient::new(backend.clone());
        let p = params(0.0);
        let first = client.complete(&request("Is it?", &p)).unwrap();
        let second = client.complete(&request("Is it?", &p)).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        assert_eq!(client.ledger().requests, 1);
        assert_eq!(client.ledger().cache_hits, 1);
    }

    #[test]
    fn sampled_requests_are_not_cached() {
        let backend = Arc::new(Echo { calls: AtomicUsize::new(0), fail_first: 0, reply: "Dairy".into() });
        let client = LlmClient::new(backend.clone());
        let p = params(2.0);
        client.complete(&request("List", &p)).unwrap();
        client.complete(&request("List", &p)).unwrap();
        assert_eq!(client.ledger().requests, 2);
    }

    #[test]
    fn retries_until_success() {
        let backend = Arc::new(Echo { calls: AtomicUsize::new(0), fail_first: 2, reply: "No".into() });
        let client = LlmClient::new(backend).with_retry(no_wait());
        let out = client.complete(&request("Is it?", &params(0.0))).unwrap();
        assert_eq!(out.text, "No");
        assert_eq!(client.ledger().requests, 3);
        let log = client.query_log().records();
        assert_eq!(log.len(), 3);
        assert_eq!(log.iter().filter(|r| r.error.is_some()).count(), 2);
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let backend = Arc::new(Echo { calls: AtomicUsize::new(0), fail_first: usize::MAX, reply: String::new() });
        let client = LlmClient::new(backend.clone()).with_retry(no_wait());
        let err = client.complete(&request("Is it?", &params(0.0))).unwrap_err();
        assert!(matches!(err, OracleError::Transport(_)));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 6);
    }

    #[test]
    fn ledger_prices_tokens() {
        let backend = Arc::new(Echo { calls: AtomicUsize::new(0), fail_first: 0, reply: "No".into() });
        let prices = PriceTable { prompt_per_1k: 1.0, completion_per_1k: 2.0 };
        let client = LlmClient::new(backend).with_prices(prices);
        client.complete(&request("a", &params(0.0))).unwrap();
        client.complete(&request("b", &params(0.0))).unwrap();
        let l = client.ledger();
        assert_eq!((l.prompt_tokens, l.completion_tokens), (200, 20));
        assert!((l.dollars - (200.0 * 1.0 + 20.0 * 2.0) / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_are_refused() {
        let backend = Arc::new(Echo { calls: AtomicUsize::new(0), fail_first: 0, reply: "No".into() });
        let client = LlmClient::new(backend);
        let mut p = params(0.0);
        p.top_p = 0.0;
        assert!(matches!(client.complete(&request("a", &p)), Err(OracleError::InvalidQuery(_))));
    }

    #[test]
    fn cache_persists_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let backend = Arc::new(Echo { calls: AtomicUsize::new(0), fail_first: 0, reply: "Yes".into() });
        let client = LlmClient::new(backend.clone()).with_cache(ResponseCache::open(&path).unwrap());
        client.complete(&request("q", &params(0.0))).unwrap();
        client.save_cache().unwrap();

        let reopened = LlmClient::new(backend.clone()).with_cache(ResponseCache::open(&path).unwrap());
        assert!(reopened.complete(&request("q", &params(0.0))).unwrap().cached);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn threshold_filter_orders_by_frequency() {
        let freq = BTreeMap::from([("a".to_string(), 3), ("b".to_string(), 7), ("c".to_string(), 3)]);
        assert_eq!(tokens_passing(&freq, 3), vec!["b", "a", "c"]);
        assert!(tokens_passing(&freq, 8).is_empty());
    }
}
