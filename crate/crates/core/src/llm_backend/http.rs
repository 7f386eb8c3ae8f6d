use std::time::Duration;

use serde::Deserialize;

use super::client::{BackendError, ChatBackend, ChatRequest, ChatResponse};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_VAR: &str = "OPENAI_API_KEY";

/// Chat-completion backend over HTTPS.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend { client, endpoint: endpoint.to_string(), api_key })
    }

    /// Reads the API key from the environment variable `var`.
    pub fn from_env(endpoint: &str, var: &str, timeout: Duration) -> Result<Self, BackendError> {
        let key = std::env::var(var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::Fatal(format!("environment variable {var} is not set")))?;
        HttpBackend::new(endpoint, key, timeout)
    }
}

fn classify(status: reqwest::StatusCode, body: &str) -> BackendError {
    let snippet: String = body.chars().take(300).collect();
    let msg = format!("HTTP {status}: {snippet}");
    if status.as_u16() == 429 || status.is_server_error() {
        BackendError::Retryable(msg)
    } else {
        BackendError::Fatal(msg)
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| BackendError::Retryable(format!("request failed: {e}")))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BackendError::Retryable(format!("reading response: {e}")))?;
        if !status.is_success() {
            return Err(classify(status, &body));
        }
        let wire: WireResponse =
            serde_json::from_str(&body).map_err(|e| BackendError::Fatal(format!("malformed response: {e}")))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Retryable("response without choices".into()))?;
        let usage = wire.usage.unwrap_or(WireUsage { prompt_tokens: 0, completion_tokens: 0 });
        Ok(ChatResponse { content, prompt_tokens: usage.prompt_tokens, completion_tokens: usage.completion_tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_limits_and_server_errors_are_retryable() {
        assert!(matches!(classify(reqwest::StatusCode::TOO_MANY_REQUESTS, ""), BackendError::Retryable(_)));
        assert!(matches!(classify(reqwest::StatusCode::BAD_GATEWAY, ""), BackendError::Retryable(_)));
        assert!(matches!(classify(reqwest::StatusCode::UNAUTHORIZED, ""), BackendError::Fatal(_)));
    }

    #[test]
    fn wire_response_parses() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Yes."}}],
                       "usage":{"prompt_tokens":31,"completion_tokens":2,"total_tokens":33}}"#;
        let wire: WireResponse = serde_json::from_str(body).unwrap();
        assert_eq!(wire.choices[0].message.content.as_deref(), Some("Yes."));
        assert_eq!(wire.usage.unwrap().prompt_tokens, 31);
    }

    #[test]
    fn missing_key_is_fatal() {
        let err = HttpBackend::from_env(DEFAULT_ENDPOINT, "TAXOCRAWL_TEST_UNSET_KEY_VAR", Duration::from_secs(1));
        assert!(matches!(err, Err(BackendError::Fatal(_))));
    }
}
