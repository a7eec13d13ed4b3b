//! Completion sources: deterministic mocks for desk-scale evaluation and an
//! HTTP client for an external completion endpoint.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tok::TokenId;

/// Everything a generator may condition on for one attempt.
#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    /// Decoded prompt, marker strings included.
    pub prompt_text: &'a str,
    pub prompt_ids: &'a [TokenId],
    /// Marker string the generation should stop at.
    pub stop_marker: &'a str,
    pub max_new_tokens: usize,
    pub temperature: f64,
    /// Retry round, starting at 0.
    pub attempt: u32,
    pub task_id: &'a str,
    /// Text the generation must start with to pass the post check.
    pub start_affix: &'a str,
    /// Text the generation must end with to pass the post check.
    pub end_affix: &'a str,
    /// Reference middle for exact-match scoring; mocks build answers from it.
    pub canonical_middle: &'a str,
}

/// Raw completion: the produced text and whether the stop marker was hit
/// before the token budget ran out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub saw_stop: bool,
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("transport error talking to generator: {0}")]
    Transport(String),
    #[error("generator endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("malformed generator response: {0}")]
    BadResponse(String),
}

/// A pluggable completion source. Implementations must be shareable across
/// evaluation workers.
pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError>;
}

/// Always produces the exactly correct region and stops cleanly.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGenerator;

impl Generator for OracleGenerator {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError> {
        Ok(Generation {
            text: format!(
                "{}{}{}",
                req.start_affix, req.canonical_middle, req.end_affix
            ),
            saw_stop: true,
        })
    }
}

/// Produces the correct region with the final end affix dropped, so the
/// post check's ends-with criterion fails whenever the affix is nonempty.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruncatingOracleGenerator;

impl Generator for TruncatingOracleGenerator {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError> {
        Ok(Generation {
            text: format!("{}{}", req.start_affix, req.canonical_middle),
            saw_stop: true,
        })
    }
}

/// Flips between the oracle and the truncating oracle with probability `p`
/// of the oracle, decided per `(task, attempt)` from a fixed seed, so
/// results do not depend on evaluation order or worker count.
#[derive(Debug, Clone, Copy)]
pub struct MixGenerator {
    p: f64,
    seed: u64,
}

impl MixGenerator {
    pub fn new(p: f64, seed: u64) -> Self {
        Self { p, seed }
    }

    fn draw(&self, task_id: &str, attempt: u32) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(task_id.as_bytes());
        h.update(attempt.to_le_bytes());
        let digest = h.finalize();
        let x = u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Generator for MixGenerator {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError> {
        if self.draw(req.task_id, req.attempt) < self.p {
            OracleGenerator.generate(req)
        } else {
            TruncatingOracleGenerator.generate(req)
        }
    }
}

/// Returns the same text for every request.
#[derive(Debug, Clone)]
pub struct FixedTextGenerator {
    pub text: String,
    pub saw_stop: bool,
}

impl FixedTextGenerator {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            saw_stop: true,
        }
    }

    pub fn without_stop(mut self) -> Self {
        self.saw_stop = false;
        self
    }
}

impl Generator for FixedTextGenerator {
    fn generate(&self, _req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError> {
        Ok(Generation {
            text: self.text.clone(),
            saw_stop: self.saw_stop,
        })
    }
}

/// Wraps another generator and records the temperatures it was called with.
pub struct RecordingGenerator<G> {
    inner: G,
    pub temperatures: Mutex<Vec<f64>>,
}

impl<G> RecordingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            temperatures: Mutex::new(Vec::new()),
        }
    }
}

impl<G: Generator> Generator for RecordingGenerator<G> {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError> {
        self.temperatures
            .lock()
            .expect("recording lock")
            .push(req.temperature);
        self.inner.generate(req)
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: [&'a str; 1],
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

/// Client for an external completion endpoint.
///
/// Sends `POST url` with body `{"prompt", "max_tokens", "temperature",
/// "stop"}` (the decoded prompt with marker strings, per the wire contract)
/// and reads `{"text"}` back. An optional `finish_reason` of `"length"`
/// marks the stop token as not reached.
pub struct HttpGenerator {
    url: String,
    client: reqwest::blocking::Client,
    transport_retries: u32,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>) -> Result<Self, GeneratorError> {
        Self::with_timeout(url, Duration::from_secs(60), 0)
    }

    pub fn with_timeout(
        url: impl Into<String>,
        timeout: Duration,
        transport_retries: u32,
    ) -> Result<Self, GeneratorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GeneratorError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            client,
            transport_retries,
        })
    }

    fn post_once(&self, req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError> {
        let body = CompletionRequest {
            prompt: req.prompt_text,
            max_tokens: req.max_new_tokens,
            temperature: req.temperature,
            stop: [req.stop_marker],
        };
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| GeneratorError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GeneratorError::Endpoint {
                status: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            });
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| GeneratorError::BadResponse(e.to_string()))?;
        let mut text = parsed.text;
        // Some servers echo the stop sequence; cut it off if present.
        let mut saw_stop = parsed.finish_reason.as_deref() != Some("length");
        if let Some(i) = text.find(req.stop_marker) {
            text.truncate(i);
            saw_stop = true;
        }
        Ok(Generation { text, saw_stop })
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, GeneratorError> {
        let mut last = None;
        for _ in 0..=self.transport_retries {
            match self.post_once(req) {
                Ok(g) => return Ok(g),
                Err(e @ GeneratorError::Transport(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt was made"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(task_id: &'a str, attempt: u32) -> GenerationRequest<'a> {
        GenerationRequest {
            prompt_text: "",
            prompt_ids: &[],
            stop_marker: "<EOT>",
            max_new_tokens: 16,
            temperature: 0.0,
            attempt,
            task_id,
            start_affix: "L",
            end_affix: "F",
            canonical_middle: "mid",
        }
    }

    #[test]
    fn oracle_produces_affixed_region() {
        let g = OracleGenerator.generate(&req("t", 0)).unwrap();
        assert_eq!(g.text, "LmidF");
        assert!(g.saw_stop);
    }

    #[test]
    fn truncating_oracle_drops_end_affix() {
        let g = TruncatingOracleGenerator.generate(&req("t", 0)).unwrap();
        assert_eq!(g.text, "Lmid");
    }

    #[test]
    fn mix_is_deterministic_per_task_and_attempt() {
        let m = MixGenerator::new(0.5, 99);
        let a = m.generate(&req("task-1", 0)).unwrap();
        let b = m.generate(&req("task-1", 0)).unwrap();
        assert_eq!(a, b);
        let hits: usize = (0..2000)
            .filter(|i| {
                let id = format!("task-{i}");
                m.generate(&req(&id, 0)).unwrap().text == "LmidF"
            })
            .count();
        // close to p = 0.5 over 2000 tasks
        assert!((800..1200).contains(&hits), "got {hits}");
    }
}
