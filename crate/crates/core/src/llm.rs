//! The black-box completion model boundary.
//!
//! Requests carry everything that influences the output, and [`CacheKey`]
//! hashes exactly those fields. The oracle backends in [`oracle`] are pure
//! functions of the prompt used to check the pipeline end to end without a
//! provider.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub mod oracle;

pub use oracle::{EchoPluginOracle, GoldOracle, ThresholdOverrideOracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn check(&self) -> Result<(), LlmError> {
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "max_tokens must be at least 1".into(),
            ));
        }
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(
                "temperature must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub from_cache: bool,
}

/// SHA-256 digest of a request's identity fields, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn of(req: &CompletionRequest) -> Self {
        fn field(h: &mut Sha256, bytes: &[u8]) {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        let mut h = Sha256::new();
        field(&mut h, b"supericl-completion-v1");
        field(&mut h, req.model_id.as_bytes());
        field(&mut h, req.prompt.as_bytes());
        h.update(u64::from(req.max_tokens).to_le_bytes());
        // -0.0 and 0.0 decode identically.
        let temperature = if req.temperature == 0.0 {
            0.0f64
        } else {
            req.temperature
        };
        h.update(temperature.to_bits().to_le_bytes());
        h.update((req.stop_sequences.len() as u64).to_le_bytes());
        for stop in &req.stop_sequences {
            field(&mut h, stop.as_bytes());
        }
        Self(hex::encode(h.finalize()))
    }

    pub fn from_hex(hex: impl Into<String>) -> Self {
        Self(hex.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl core::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("provider error {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache entry {0} failed its integrity check")]
    CacheCorrupt(String),
    #[error("cache io error: {0}")]
    CacheIo(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Transport(_) | LlmError::RateLimited { .. } | LlmError::Timeout
        )
    }
}

pub trait CompletionBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Truncates `text` at the earliest occurrence of any stop sequence.
pub fn apply_stop_sequences(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    String::from(&text[..cut])
}

/// Wraps a backend and counts invocations.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: CompletionBackend> CompletionBackend for CountingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}
