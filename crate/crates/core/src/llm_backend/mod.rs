//! Chat-completion implementation of the oracle contract.

mod client;
mod http;
mod ledger;
mod llm_oracle;
mod parse;
mod templates;

pub use self::client::{
    tokens_passing, write_atomic, BackendError, CacheMode, ChatBackend, ChatMessage, ChatRequest, ChatResponse,
    Completion, CompletionParams, CompletionRequest, LlmClient, ResponseCache, RetryPolicy,
};
pub use self::http::{HttpBackend, DEFAULT_API_KEY_VAR, DEFAULT_ENDPOINT};
pub use self::ledger::{CostLedger, PriceTable};
pub use self::llm_oracle::LlmOracle;
pub use self::parse::{
    parse_choice, parse_csv_list, parse_descriptions, parse_direction, parse_name, parse_yes_no, ParseError,
};
pub use self::templates::{render, Bindings, TemplateError, TemplateName};
