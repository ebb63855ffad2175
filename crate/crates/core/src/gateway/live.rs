use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::{HeaderMap, CONTENT_TYPE, RETRY_AFTER};
use reqwest::StatusCode;
use serde_json::Value;

use super::{Backend, BackendError, BackendKind, BackendResponse, CompletionRequest, ModelConfig};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "SCALE_SCRIBE_API_KEY";

/// Chat-completion endpoint over HTTPS.
pub struct LiveBackend {
    client: Client,
    api_key: Option<String>,
    sent: AtomicUsize,
}

impl LiveBackend {
    /// Reads the API key from the environment.
    pub fn from_env(config: &ModelConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{API_KEY_ENV} is not set; requests will be sent without credentials");
        }
        Self::new(config, api_key)
    }

    pub fn new(config: &ModelConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Fatal(format!("building HTTP client: {e}")))?;
        Ok(LiveBackend {
            client,
            api_key,
            sent: AtomicUsize::new(0),
        })
    }

    /// Requests put on the wire so far, including failed ones.
    pub fn requests_sent(&self) -> usize {
        self.sent.load(Ordering::SeqCst)
    }
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn message_content(body: &Value) -> Option<&str> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

impl Backend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn send(&self, request: &CompletionRequest, config: &ModelConfig) -> Result<BackendResponse, BackendError> {
        self.sent.fetch_add(1, Ordering::SeqCst);
        let mut builder = self
            .client
            .post(&config.endpoint_url)
            .header(CONTENT_TYPE, "application/json")
            .body(request.body().to_string());
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(BackendError::RateLimited {
                retry_after: retry_after(response.headers()),
            });
        }
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(format!("reading response body: {e}")))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("response is not JSON: {e}")))?;
        let content = message_content(&body).ok_or_else(|| {
            BackendError::Transport("response has no choices[0].message.content".into())
        })?;
        Ok(BackendResponse {
            text: content.to_string(),
            source: BackendKind::Live,
        })
    }
}
