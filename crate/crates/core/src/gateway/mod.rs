//! Chat-completion and embedding endpoints.
//!
//! Backends implement [`ChatBackend`] / [`Embedder`]; the HTTP clients speak
//! the OpenAI-compatible JSON protocol (feature `http`), and [`mock`] holds
//! deterministic offline stand-ins. [`extract_batch`] runs many prompts under
//! a parallelism bound and always returns one slot per prompt.

pub mod cache;
#[cfg(feature = "http")]
pub mod http;
pub mod mock;
pub mod parse;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::CachedEmbedder;
pub use mock::{mock_embed, FixedChat, MockEmbedder, ReplayChat, ScriptedChat};
pub use parse::{parse_model_output, ExtractParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("authentication rejected by endpoint (HTTP {0})")]
    Auth(u16),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("refusing to embed empty text")]
    EmptyText,
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
    #[error("batch aborted after a terminal error")]
    Aborted,
}

impl GatewayError {
    /// Errors worth retrying: transport failures, timeouts, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout(_) => true,
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Errors that make every further request pointless.
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            GatewayError::Auth(_) | GatewayError::MissingApiKey(_) | GatewayError::Config(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token; `None` sends no auth.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: u64,
    pub max_parallel: usize,
    pub strip_think_blocks: bool,
    pub retry: RetryPolicy,
}

impl Default for ChatEndpointConfig {
    fn default() -> Self {
        ChatEndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "Qwen3-8B".into(),
            api_key_env: None,
            temperature: 0.0,
            max_output_tokens: 2048,
            request_timeout_secs: 120,
            max_parallel: 4,
            strip_think_blocks: true,
            retry: RetryPolicy::default(),
        }
    }
}

impl ChatEndpointConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_parallel == 0 {
            return Err(GatewayError::Config("max_parallel must be >= 1".into()));
        }
        if self.retry.attempts == 0 {
            return Err(GatewayError::Config("retry.attempts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: Option<String>,
    /// Expected dimension; when set, responses of another size are rejected.
    pub dims: Option<usize>,
    pub request_timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingEndpointConfig {
    fn default() -> Self {
        EmbeddingEndpointConfig {
            base_url: "http://localhost:8001/v1".into(),
            model_name: "thenlper/gte-large-zh".into(),
            api_key_env: None,
            dims: None,
            request_timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base * 2^(retry-1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64 << (retry.saturating_sub(1)).min(20);
        Duration::from_millis(
            self.base_delay_ms
                .saturating_mul(factor)
                .min(self.max_delay_ms),
        )
    }
}

/// Runs `op` up to `policy.attempts` times, backing off exponentially between
/// transient failures. Non-transient errors return immediately.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    let attempts = policy.attempts.max(1);
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() && attempt < attempts => {
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
            Err(e) if e.is_transient() && attempts > 1 => {
                return Err(GatewayError::RetriesExhausted {
                    attempts,
                    last: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawModelResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

/// One prompt addressed to a chat backend. `id` lets replaying mocks pick
/// their canned answer.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub id: &'a str,
    pub prompt: &'a str,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<RawModelResponse, GatewayError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<RawModelResponse, GatewayError> {
        (**self).complete(req)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<RawModelResponse, GatewayError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub dims: usize,
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector {
            dims: values.len(),
            values,
        }
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

/// Cosine similarity; 0 when either vector has zero norm.
///
/// The denominator is `sqrt(|a|² |b|²)`, which makes `cosine(a, a)` exactly 1.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let denom = (dot(&a.values, &a.values) * dot(&b.values, &b.values)).sqrt();
    let dot = dot(&a.values, &b.values);
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

pub trait Embedder: Send + Sync {
    /// Identifies provider and model; part of the cache key.
    fn namespace(&self) -> String;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn namespace(&self) -> String {
        (**self).namespace()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        (**self).embed(text)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn namespace(&self) -> String {
        (**self).namespace()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        (**self).embed(text)
    }
}

/// Counting semaphore bounding in-flight requests to one endpoint.
#[derive(Debug)]
pub struct ConcurrencyLimiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

impl ConcurrencyLimiter {
    pub fn new(max: usize) -> Self {
        ConcurrencyLimiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter lock poisoned");
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        Permit { limiter: self }
    }

    /// Highest number of simultaneously held permits observed.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

pub struct Permit<'a> {
    limiter: &'a ConcurrencyLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self
            .limiter
            .in_flight
            .lock()
            .expect("limiter lock poisoned");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSlot {
    pub id: String,
    pub result: Result<RawModelResponse, GatewayError>,
}

/// Sends every `(id, prompt)` to `backend` with at most `max_parallel` calls
/// in flight. Returns one slot per input, in input order.
///
/// A terminal error (bad credentials, bad config) aborts the batch and is
/// returned as `Err`; any other failure is recorded in its slot.
pub fn extract_batch(
    backend: &dyn ChatBackend,
    prompts: &[(String, String)],
    max_parallel: usize,
) -> Result<Vec<BatchSlot>, GatewayError> {
    let limiter = ConcurrencyLimiter::new(max_parallel);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let terminal: Mutex<Option<GatewayError>> = Mutex::new(None);
    let results: Vec<Mutex<Option<Result<RawModelResponse, GatewayError>>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();

    let workers = max_parallel.max(1).min(prompts.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((id, prompt)) = prompts.get(i) else {
                    break;
                };
                let result = {
                    let _permit = limiter.acquire();
                    backend.complete(&ChatRequest { id, prompt })
                };
                if let Err(e) = &result {
                    if e.is_terminal() {
                        abort.store(true, Ordering::SeqCst);
                        terminal
                            .lock()
                            .expect("poisoned")
                            .get_or_insert_with(|| e.clone());
                    }
                }
                *results[i].lock().expect("poisoned") = Some(result);
            });
        }
    });

    if let Some(e) = terminal.into_inner().expect("poisoned") {
        return Err(e);
    }
    Ok(prompts
        .iter()
        .zip(results)
        .map(|((id, _), r)| BatchSlot {
            id: id.clone(),
            result: r
                .into_inner()
                .expect("poisoned")
                .unwrap_or(Err(GatewayError::Aborted)),
        })
        .collect())
}
