//! Blocking clients for OpenAI-compatible `/chat/completions` and `/embeddings`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    with_retry, ChatBackend, ChatEndpointConfig, ChatRequest, ConcurrencyLimiter, Embedder,
    EmbeddingEndpointConfig, EmbeddingVector, GatewayError, RawModelResponse, RetryPolicy, Usage,
};

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
        .http_status_as_error(false)
        .build()
        .into()
}

fn api_key(var: &Option<String>) -> Result<Option<String>, GatewayError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| GatewayError::MissingApiKey(name.clone())),
    }
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn map_transport(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(t) => GatewayError::Timeout(t.to_string()),
        other => GatewayError::Transport(other.to_string()),
    }
}

/// POSTs `body` and returns the parsed JSON response, mapping status codes
/// onto [`GatewayError`] variants.
fn post_json(
    agent: &ureq::Agent,
    url: &str,
    key: Option<&str>,
    body: &Value,
) -> Result<Value, GatewayError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let mut resp = req.send_json(body).map_err(map_transport)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(map_transport)?;
    match status {
        200..=299 => serde_json::from_str(&text)
            .map_err(|e| GatewayError::Protocol(format!("invalid JSON body: {e}"))),
        401 | 403 => Err(GatewayError::Auth(status)),
        _ => Err(GatewayError::Http {
            status,
            body: text.chars().take(500).collect(),
        }),
    }
}

/// Chat client. Clones share one in-flight limit.
#[derive(Clone)]
pub struct HttpChatClient {
    cfg: ChatEndpointConfig,
    agent: ureq::Agent,
    limiter: Arc<ConcurrencyLimiter>,
}

impl HttpChatClient {
    pub fn new(cfg: ChatEndpointConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(HttpChatClient {
            agent: agent(cfg.request_timeout_secs),
            limiter: Arc::new(ConcurrencyLimiter::new(cfg.max_parallel)),
            cfg,
        })
    }

    pub fn config(&self) -> &ChatEndpointConfig {
        &self.cfg
    }

    pub fn limiter(&self) -> &ConcurrencyLimiter {
        &self.limiter
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
    /// Some servers split reasoning into its own field.
    #[serde(default)]
    reasoning_content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<RawModelResponse, GatewayError> {
        let key = api_key(&self.cfg.api_key_env)?;
        let url = endpoint(&self.cfg.base_url, "chat/completions");
        let body = json!({
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
            "stream": false,
        });
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let value = with_retry(&self.cfg.retry, |_| {
            post_json(&self.agent, &url, key.as_deref(), &body)
        })?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| GatewayError::Protocol(format!("chat response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Protocol("no choices".into()))?;
        let mut text = choice.message.content.unwrap_or_default();
        if let Some(reasoning) = choice.message.reasoning_content.filter(|r| !r.is_empty()) {
            text = format!("<think>{reasoning}</think>{text}");
        }
        let usage = parsed.usage.unwrap_or_default();
        Ok(RawModelResponse {
            text,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            latency_ms,
        })
    }
}

pub struct HttpEmbedder {
    cfg: EmbeddingEndpointConfig,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(cfg: EmbeddingEndpointConfig) -> Self {
        HttpEmbedder {
            agent: agent(cfg.request_timeout_secs),
            cfg,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl Embedder for HttpEmbedder {
    fn namespace(&self) -> String {
        format!(
            "{}|{}",
            self.cfg.base_url.trim_end_matches('/'),
            self.cfg.model_name
        )
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let key = api_key(&self.cfg.api_key_env)?;
        let url = endpoint(&self.cfg.base_url, "embeddings");
        let body = json!({"model": self.cfg.model_name, "input": [text]});
        let value = with_retry(&self.cfg.retry, |_| {
            post_json(&self.agent, &url, key.as_deref(), &body)
        })?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| GatewayError::Protocol(format!("embedding response: {e}")))?;
        let values = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Protocol("empty data".into()))?
            .embedding;
        if let Some(expected) = self.cfg.dims {
            if values.len() != expected {
                return Err(GatewayError::Protocol(format!(
                    "expected {expected} dims, got {}",
                    values.len()
                )));
            }
        }
        Ok(EmbeddingVector::new(values))
    }
}

/// Connection settings for pushing Cypher to a property-graph database over
/// its HTTP transaction endpoint (`POST {base_url}/db/{database}/tx/commit`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
#[serde(default)]
pub struct GraphDbConfig {
    pub base_url: String,
    pub database: String,
    /// Environment variables holding the credentials; no auth header when unset.
    pub user_env: Option<String>,
    pub password_env: Option<String>,
    pub request_timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for GraphDbConfig {
    fn default() -> Self {
        GraphDbConfig {
            base_url: "http://localhost:7474".into(),
            database: "neo4j".into(),
            user_env: None,
            password_env: None,
            request_timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

/// Sends the statements in one transaction. Returns the number of statements accepted.
pub fn push_cypher(cfg: &GraphDbConfig, statements: &[String]) -> Result<usize, GatewayError> {
    let user = api_key(&cfg.user_env)?;
    let password = api_key(&cfg.password_env)?;
    let agent = agent(cfg.request_timeout_secs);
    let url = endpoint(&cfg.base_url, &format!("db/{}/tx/commit", cfg.database));
    let body = json!({
        "statements": statements.iter().map(|s| json!({"statement": s})).collect::<Vec<_>>()
    });
    let auth = match (user, password) {
        (Some(u), Some(p)) => Some(basic_auth(&u, &p)),
        _ => None,
    };
    let value = with_retry(&cfg.retry, |_| {
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(a) = &auth {
            req = req.header("Authorization", a);
        }
        let mut resp = req.send_json(&body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        match status {
            200..=299 => serde_json::from_str::<Value>(&text)
                .map_err(|e| GatewayError::Protocol(e.to_string())),
            401 | 403 => Err(GatewayError::Auth(status)),
            _ => Err(GatewayError::Http { status, body: text }),
        }
    })?;
    if let Some(errors) = value.get("errors").and_then(Value::as_array) {
        if !errors.is_empty() {
            return Err(GatewayError::Protocol(format!(
                "database rejected statements: {}",
                Value::Array(errors.clone())
            )));
        }
    }
    Ok(statements.len())
}

fn basic_auth(user: &str, password: &str) -> String {
    format!("Basic {}", STANDARD.encode(format!("{user}:{password}")))
}
