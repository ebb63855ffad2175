//! Sending prompt bundles to a chat-completion backend.
//!
//! [`Gateway::complete`] owns retries, the in-flight request cap and local
//! validation of the structured output. Backends only move text: a live HTTP
//! endpoint ([`LiveBackend`]), a deterministic synthetic rater
//! ([`ScriptedRater`]) or a content-addressed response cache
//! ([`ReplayBackend`]) that can record from an upstream backend.

mod live;
mod replay;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use live::{LiveBackend, API_KEY_ENV};
pub use replay::{CachedResponse, ReplayBackend, ResponseCache};
pub use scripted::{NoiseModel, ScriptedRater};

use crate::corpus::CaseKey;
use crate::parser::{output_schema, parse, ParseError, ParsedRatings};
use crate::prompt::{PromptBundle, Role};
use crate::scale::ScaleDefinition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Provider-side JSON schema enforcement.
    #[default]
    Schema,
    /// Free-form JSON object mode.
    JsonObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Passed through verbatim as top-level request fields. Nothing else
    /// (temperature, top_p, ...) is ever added by the gateway.
    pub extra_params: BTreeMap<String, Value>,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub max_concurrent_requests: usize,
    pub output_mode: OutputMode,
    /// First retry delay; doubles on each further attempt.
    pub retry_base_delay_ms: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "o3-mini-2025-01-31".into(),
            extra_params: BTreeMap::new(),
            max_retries: 3,
            timeout_secs: 300,
            max_concurrent_requests: 4,
            output_mode: OutputMode::Schema,
            retry_base_delay_ms: 1000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_concurrent_requests == 0 {
            return Err(GatewayError::Config(
                "max_concurrent_requests must be at least 1".into(),
            ));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::Config("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.retry_base_delay_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Scripted,
    Replay,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Live => "live",
            BackendKind::Scripted => "scripted",
            BackendKind::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

/// Everything a backend needs for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_name: String,
    /// System message first, then the bundle's messages in order.
    pub messages: Vec<WireMessage>,
    pub extra_params: BTreeMap<String, Value>,
    pub response_format: Value,
    pub target: CaseKey,
    pub fingerprint: String,
}

impl CompletionRequest {
    pub fn new(bundle: &PromptBundle, config: &ModelConfig, scale: &ScaleDefinition) -> Self {
        let mut messages = Vec::with_capacity(bundle.messages.len() + 1);
        messages.push(WireMessage {
            role: "system".into(),
            content: bundle.system_text.clone(),
        });
        messages.extend(bundle.messages.iter().map(|m| WireMessage {
            role: match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            }
            .into(),
            content: m.content.clone(),
        }));
        let response_format = match config.output_mode {
            OutputMode::Schema => json!({
                "type": "json_schema",
                "json_schema": {
                    "name": "bprs_assessment",
                    "strict": true,
                    "schema": output_schema(scale),
                }
            }),
            OutputMode::JsonObject => json!({"type": "json_object"}),
        };
        CompletionRequest {
            fingerprint: fingerprint(bundle, &config.model_name, &config.extra_params),
            model_name: config.model_name.clone(),
            messages,
            extra_params: config.extra_params.clone(),
            response_format,
            target: bundle.target.clone(),
        }
    }

    /// JSON body for a chat-completion endpoint.
    pub fn body(&self) -> Value {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), Value::from(self.model_name.as_str()));
        body.insert(
            "messages".into(),
            serde_json::to_value(&self.messages).expect("messages serialize"),
        );
        body.insert("response_format".into(), self.response_format.clone());
        for (k, v) in &self.extra_params {
            body.insert(k.clone(), v.clone());
        }
        Value::Object(body)
    }
}

/// SHA-256 over a canonical JSON encoding of the request content.
pub fn fingerprint(
    bundle: &PromptBundle,
    model_name: &str,
    extra_params: &BTreeMap<String, Value>,
) -> String {
    let canonical = json!({
        "system_text": bundle.system_text,
        "messages": bundle.messages,
        "model_name": model_name,
        "extra_params": extra_params,
    });
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub source: BackendKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no cached response")]
    NoCachedResponse,
    #[error("{0}")]
    Fatal(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited { .. } => true,
            BackendError::Http { status, .. } => *status >= 500,
            BackendError::NoCachedResponse | BackendError::Fatal(_) => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn send(&self, request: &CompletionRequest, config: &ModelConfig) -> Result<BackendResponse, BackendError>;

    /// Called once an output has passed validation.
    fn accept(&self, _request: &CompletionRequest, _response: &BackendResponse) -> Result<(), BackendError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("rate limited after {attempts} attempt(s) (retry after {retry_after:?})")]
    RateLimited {
        retry_after: Option<Duration>,
        attempts: u32,
    },
    #[error("all {attempts} output(s) failed validation; last: {last}")]
    OutputRejected { last: ParseError, attempts: u32 },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub raw_text: String,
    pub request_fingerprint: String,
    pub attempts: u32,
    pub backend: BackendKind,
    pub parsed: ParsedRatings,
}

/// Counting semaphore bounding concurrent backend calls.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct PermitGuard<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            available: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().expect("permit lock");
        while *available == 0 {
            available = self.freed.wait(available).expect("permit lock");
        }
        *available -= 1;
        PermitGuard(self)
    }
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("permit lock") += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    config: ModelConfig,
    scale: Arc<ScaleDefinition>,
    backend: Arc<dyn Backend>,
    permits: Permits,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl Gateway {
    pub fn new(
        config: ModelConfig,
        scale: Arc<ScaleDefinition>,
        backend: Arc<dyn Backend>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Gateway {
            permits: Permits::new(config.max_concurrent_requests),
            config,
            scale,
            backend,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Number of `complete` invocations so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous backend calls observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn send_once(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError> {
        let _permit = self.permits.acquire();
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let result = self.backend.send(request, &self.config);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    pub fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let request = CompletionRequest::new(bundle, &self.config, &self.scale);
        let max_attempts = self.config.max_retries + 1;
        let mut last_err = None;

        for attempt in 1..=max_attempts {
            let wait = match self.send_once(&request) {
                Ok(response) => match parse(&response.text, &self.scale) {
                    Ok(parsed) => {
                        self.backend
                            .accept(&request, &response)
                            .map_err(|e| GatewayError::Backend(e.to_string()))?;
                        return Ok(CompletionResult {
                            raw_text: response.text,
                            request_fingerprint: request.fingerprint,
                            attempts: attempt,
                            backend: response.source,
                            parsed,
                        });
                    }
                    Err(err) => {
                        log::warn!(
                            "{}: output rejected on attempt {attempt}: {err}",
                            request.target
                        );
                        last_err = Some(GatewayError::OutputRejected {
                            last: err,
                            attempts: attempt,
                        });
                        self.config.backoff(attempt)
                    }
                },
                Err(err) => {
                    let wait = match &err {
                        BackendError::RateLimited { retry_after } => {
                            retry_after.unwrap_or_else(|| self.config.backoff(attempt))
                        }
                        _ => self.config.backoff(attempt),
                    };
                    let retryable = err.retryable();
                    last_err = Some(match err {
                        BackendError::RateLimited { retry_after } => GatewayError::RateLimited {
                            retry_after,
                            attempts: attempt,
                        },
                        BackendError::NoCachedResponse => GatewayError::Transport {
                            message: format!("no cached response for {}", request.fingerprint),
                            attempts: attempt,
                        },
                        other => GatewayError::Transport {
                            message: other.to_string(),
                            attempts: attempt,
                        },
                    });
                    if !retryable {
                        break;
                    }
                    log::warn!("{}: attempt {attempt} failed, retrying", request.target);
                    wait
                }
            };
            if attempt < max_attempts {
                thread::sleep(wait);
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}
