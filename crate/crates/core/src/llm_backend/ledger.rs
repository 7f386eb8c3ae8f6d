use serde::{Deserialize, Serialize};

/// Dollar price per thousand tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl Default for PriceTable {
    // gpt-3.5-turbo list prices at the time of the original experiments
    fn default() -> Self {
        PriceTable { prompt_per_1k: 0.0015, completion_per_1k: 0.002 }
    }
}

/// Running totals of API usage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Requests actually sent, retries included; cache hits excluded.
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollars: f64,
    #[serde(default)]
    pub cache_hits: u64,
}

impl CostLedger {
    pub fn charge(&mut self, prompt_tokens: u64, completion_tokens: u64, prices: &PriceTable) {
        self.prompt_tokens += prompt_tokens;
        self.completion_tokens += completion_tokens;
        // Recomputed from the totals so the ledger never drifts from them.
        self.dollars = self.prompt_tokens as f64 * prices.prompt_per_1k / 1000.0
            + self.completion_tokens as f64 * prices.completion_per_1k / 1000.0;
    }

    /// Sum of two ledgers, e.g. a checkpointed run plus its continuation.
    pub fn combined(&self, other: &CostLedger) -> CostLedger {
        CostLedger {
            requests: self.requests + other.requests,
            prompt_tokens: self.prompt_tokens + other.prompt_tokens,
            completion_tokens: self.completion_tokens + other.completion_tokens,
            dollars: self.dollars + other.dollars,
            cache_hits: self.cache_hits + other.cache_hits,
        }
    }
}
