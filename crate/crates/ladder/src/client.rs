//! OpenAI-compatible chat-completions client with bounded concurrency and
//! retries.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use ladder_core::ExtractionPolicy;
use rand::Rng;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;

pub const API_KEY_ENV: &str = "LADDER_API_KEY";
const BACKOFF_CAP: Duration = Duration::from_secs(30);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Never written back out; falls back to `LADDER_API_KEY`.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// First retry delay; later ones double up to 30 s, with jitter.
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub extraction: ExtractionPolicy,
}

fn default_max_in_flight() -> usize {
    4
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_max_tokens() -> u32 {
    512
}
fn default_backoff_base_ms() -> u64 {
    500
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            max_in_flight: default_max_in_flight(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            backoff_base_ms: default_backoff_base_ms(),
            extraction: ExtractionPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |msg: String| Err(ClientError::InvalidConfig(msg));
        if reqwest::Url::parse(&self.base_url).is_err() {
            return bad(format!("base_url `{}` is not a URL", self.base_url));
        }
        if self.model.trim().is_empty() {
            return bad("model must be nonempty".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("cannot build HTTP client: {0}")]
    Build(#[from] reqwest::Error),
}

/// Why a single remote call produced no value.
#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CallError {
    #[error("empty {field}")]
    EmptyInput { field: String },
    #[error("HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {message}")]
    Malformed { message: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
}

pub type GenerationError = CallError;

enum AttemptError {
    Transient(String),
    Fatal(CallError),
}

/// Shared HTTP plumbing: one semaphore permit per attempt, retries on
/// timeouts, connection failures, 429 and 5xx.
#[derive(Debug)]
pub(crate) struct HttpCaller {
    http: reqwest::Client,
    permits: Arc<Semaphore>,
    retries: u32,
    backoff_base: Duration,
    api_key: Option<String>,
}

impl HttpCaller {
    pub(crate) fn new(
        api_key: Option<String>,
        max_in_flight: usize,
        timeout_secs: f64,
        retries: u32,
        backoff_base_ms: u64,
    ) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(timeout_secs))
            .build()?;
        Ok(Self {
            http,
            permits: Arc::new(Semaphore::new(max_in_flight.max(1))),
            retries,
            backoff_base: Duration::from_millis(backoff_base_ms),
            api_key: api_key.or_else(|| std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())),
        })
    }

    pub(crate) async fn post_json(&self, url: &str, body: &Value) -> (Result<Value, CallError>, u32) {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(url, body).await {
                Ok(v) => return (Ok(v), attempts),
                Err(AttemptError::Fatal(e)) => return (Err(e), attempts),
                Err(AttemptError::Transient(last)) => {
                    if attempts > self.retries {
                        return (Err(CallError::Exhausted { attempts, last }), attempts);
                    }
                    log::debug!("{url}: attempt {attempts} failed ({last}), retrying");
                    tokio::time::sleep(backoff_delay(self.backoff_base, attempts)).await;
                }
            }
        }
    }

    async fn attempt(&self, url: &str, body: &Value) -> Result<Value, AttemptError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .expect("semaphore is never closed");
        let mut request = self.http.post(url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .await
            .map_err(|e| AttemptError::Transient(transport_message(&e)))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| AttemptError::Transient(transport_message(&e)))?;
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(AttemptError::Transient(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(CallError::Rejected {
                status: status.as_u16(),
                body: truncate(&text, 500),
            }));
        }
        serde_json::from_str(&text).map_err(|e| {
            AttemptError::Fatal(CallError::Malformed {
                message: e.to_string(),
            })
        })
    }
}

fn transport_message(e: &reqwest::Error) -> String {
    if e.is_timeout() {
        "timed out".to_string()
    } else if e.is_connect() {
        format!("connection failed: {e}")
    } else {
        e.to_string()
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((cut, _)) => format!("{}...", &s[..cut]),
        None => s.to_string(),
    }
}

/// Delay before retry number `failed` (1-based): exponential, capped, with
/// the upper half jittered.
pub fn backoff_delay(base: Duration, failed: u32) -> Duration {
    let exp = base.saturating_mul(1u32 << (failed - 1).min(20));
    let ceiling = exp.min(BACKOFF_CAP);
    let half = ceiling / 2;
    half + ceiling.saturating_sub(half).mul_f64(rand::thread_rng().gen::<f64>())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    pub id: u64,
    /// Raw first-choice content, or why there is none.
    pub outcome: Result<String, GenerationError>,
    pub attempts: u32,
    pub latency_ms: u64,
}

impl GenerationResult {
    pub fn text(&self) -> Option<&str> {
        self.outcome.as_deref().ok()
    }

    pub fn error(&self) -> Option<&GenerationError> {
        self.outcome.as_ref().err()
    }
}

/// Client for one chat-completions endpoint. Cheap to share by reference
/// across tasks; the in-flight bound holds across all of them.
#[derive(Debug)]
pub struct LlmClient {
    config: EndpointConfig,
    caller: HttpCaller,
    url: String,
    next_id: AtomicU64,
}

impl LlmClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let caller = HttpCaller::new(
            config.api_key.clone(),
            config.max_in_flight,
            config.timeout_secs,
            config.retries,
            config.backoff_base_ms,
        )?;
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(Self {
            config,
            caller,
            url,
            next_id: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Model name, used to tag what this endpoint produced.
    pub fn tag(&self) -> &str {
        &self.config.model
    }

    pub fn extraction(&self) -> &ExtractionPolicy {
        &self.config.extraction
    }

    pub async fn generate(&self, prompt: &str) -> GenerationResult {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        if prompt.trim().is_empty() {
            return GenerationResult {
                id,
                outcome: Err(CallError::EmptyInput {
                    field: "prompt".into(),
                }),
                attempts: 0,
                latency_ms: 0,
            };
        }
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let (response, attempts) = self.caller.post_json(&self.url, &body).await;
        let outcome = response.and_then(|v| {
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| CallError::Malformed {
                    message: "missing choices[0].message.content".into(),
                })
        });
        GenerationResult {
            id,
            outcome,
            attempts,
            latency_ms: start.elapsed().as_millis() as u64,
        }
    }

    /// Results line up with `prompts`; failures stay per item.
    pub async fn generate_batch<P: AsRef<str>>(&self, prompts: &[P]) -> Vec<GenerationResult> {
        join_all(prompts.iter().map(|p| self.generate(p.as_ref()))).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let base = Duration::from_millis(500);
        for failed in 1..=12 {
            let d = backoff_delay(base, failed);
            let ceiling = (base * 2u32.pow(failed - 1)).min(BACKOFF_CAP);
            assert!(d >= ceiling / 2 && d <= ceiling, "{failed}: {d:?}");
        }
        assert!(backoff_delay(base, 40) <= BACKOFF_CAP);
    }

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::new("http://localhost:1/v1", "m");
        assert!(c.validate().is_ok());
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        c.max_in_flight = 1;
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        c.timeout_secs = 1.0;
        c.base_url = "not a url".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn api_key_is_not_serialized() {
        let mut c = EndpointConfig::new("http://x", "m");
        c.api_key = Some("secret".into());
        assert!(!serde_json::to_string(&c).unwrap().contains("secret"));
    }
}
