//! Offline backends: a hashed character-bigram embedder and canned chat responders.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{
    ChatBackend, ChatRequest, Embedder, EmbeddingVector, GatewayError, RawModelResponse, Usage,
};

pub const MOCK_DIMS: usize = 64;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bucket (0..64) of a character gram: FNV-1a of its UTF-8 bytes, mod 64.
pub fn mock_bucket(gram: &str) -> usize {
    (fnv1a(gram.as_bytes()) % MOCK_DIMS as u64) as usize
}

/// Deterministic 64-dim embedding: count character bigrams per hash bucket,
/// then L2-normalize. A one-character text counts that character instead.
/// The empty text maps to the zero vector.
pub fn mock_embed(text: &str) -> EmbeddingVector {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = [0f64; MOCK_DIMS];
    if chars.len() == 1 {
        counts[mock_bucket(text)] += 1.0;
    }
    let mut buf = String::with_capacity(8);
    for pair in chars.windows(2) {
        buf.clear();
        buf.push(pair[0]);
        buf.push(pair[1]);
        counts[mock_bucket(&buf)] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    let values = counts
        .iter()
        .map(|c| if norm > 0.0 { (c / norm) as f32 } else { 0.0 })
        .collect();
    EmbeddingVector::new(values)
}

/// [`Embedder`] backed by [`mock_embed`]. Rejects blank text like a real provider would.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEmbedder;

impl Embedder for MockEmbedder {
    fn namespace(&self) -> String {
        "mock/bigram-64".into()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        Ok(mock_embed(text))
    }
}

fn canned(text: &str) -> RawModelResponse {
    RawModelResponse {
        text: text.to_string(),
        usage: Usage::default(),
        latency_ms: 0,
    }
}

/// Answers every prompt with the same completion.
#[derive(Debug, Clone)]
pub struct FixedChat(pub String);

impl ChatBackend for FixedChat {
    fn complete(&self, _req: &ChatRequest<'_>) -> Result<RawModelResponse, GatewayError> {
        Ok(canned(&self.0))
    }
}

/// Replays canned completions keyed by request id.
#[derive(Debug, Clone, Default)]
pub struct ReplayChat {
    responses: HashMap<String, String>,
    fallback: Option<String>,
}

#[derive(Deserialize)]
struct ReplayLine {
    record_id: String,
    response: String,
}

impl ReplayChat {
    pub fn new(responses: HashMap<String, String>) -> Self {
        ReplayChat {
            responses,
            fallback: None,
        }
    }

    /// Completion used for ids without a canned answer.
    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }

    /// Loads `{"record_id": ..., "response": ...}` lines.
    pub fn from_jsonl(path: &Path) -> Result<Self, GatewayError> {
        let f = fs::File::open(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut responses = HashMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line =
                line.map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReplayLine = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Config(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            responses.insert(parsed.record_id, parsed.response);
        }
        Ok(ReplayChat::new(responses))
    }
}

impl ChatBackend for ReplayChat {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<RawModelResponse, GatewayError> {
        match self.responses.get(req.id).or(self.fallback.as_ref()) {
            Some(text) => Ok(canned(text)),
            None => Err(GatewayError::Http {
                status: 404,
                body: format!("no canned response for {}", req.id),
            }),
        }
    }
}

type Script = dyn Fn(&ChatRequest<'_>) -> Result<String, GatewayError> + Send + Sync;

/// Completion computed by a closure, for tests that need per-call behaviour.
pub struct ScriptedChat(Box<Script>);

impl ScriptedChat {
    pub fn new(
        f: impl Fn(&ChatRequest<'_>) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedChat(Box::new(f))
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<RawModelResponse, GatewayError> {
        (self.0)(req).map(|t| canned(&t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::cosine;

    #[test]
    fn self_similarity_is_one() {
        let v = mock_embed("曾国藩创建湘军");
        assert_eq!(cosine(&v, &v), 1.0);
        assert_eq!(v.dims, 64);
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn repeatable() {
        assert_eq!(mock_embed("abc"), mock_embed("abc"));
        assert_eq!(mock_embed("").norm(), 0.0);
        assert!(mock_embed("a").norm() > 0.0);
    }

    #[test]
    fn blank_text_rejected() {
        assert_eq!(MockEmbedder.embed("  "), Err(GatewayError::EmptyText));
    }

    #[test]
    fn replay_by_id() {
        let chat = ReplayChat::new(HashMap::from([("r1".to_string(), "{}".to_string())]));
        assert_eq!(
            chat.complete(&ChatRequest {
                id: "r1",
                prompt: ""
            })
            .unwrap()
            .text,
            "{}"
        );
        assert!(chat
            .complete(&ChatRequest {
                id: "r2",
                prompt: ""
            })
            .is_err());
        let chat = chat.with_fallback("x");
        assert_eq!(
            chat.complete(&ChatRequest {
                id: "r2",
                prompt: ""
            })
            .unwrap()
            .text,
            "x"
        );
    }
}
