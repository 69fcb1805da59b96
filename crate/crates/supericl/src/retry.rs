//! Retry with exponential backoff for retryable completion errors.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use supericl_core::{CompletionBackend, CompletionRequest, CompletionResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.multiplier.powi(retry.saturating_sub(1) as i32);
        Duration::from_millis(ms.min(600_000.0) as u64)
    }
}

/// Calls `backend` until success, a non-retryable error, or `max_attempts` calls.
pub fn retrying_complete(
    backend: &impl CompletionBackend,
    request: &CompletionRequest,
    policy: &RetryPolicy,
) -> Result<CompletionResponse, LlmError> {
    retrying_complete_with(backend, request, policy, std::thread::sleep)
}

pub fn retrying_complete_with(
    backend: &impl CompletionBackend,
    request: &CompletionRequest,
    policy: &RetryPolicy,
    mut sleep: impl FnMut(Duration),
) -> Result<CompletionResponse, LlmError> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match backend.complete(request) {
            Ok(resp) => return Ok(resp),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) if attempt >= max => {
                return Err(LlmError::RetriesExhausted {
                    attempts: attempt,
                    last: Box::new(e),
                })
            }
            Err(e) => {
                let mut delay = policy.delay(attempt);
                if let LlmError::RateLimited {
                    retry_after_ms: Some(ms),
                } = e
                {
                    delay = delay.max(Duration::from_millis(ms));
                }
                sleep(delay);
                attempt += 1;
            }
        }
    }
}

pub struct RetryingBackend<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B> RetryingBackend<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<B: CompletionBackend> CompletionBackend for RetryingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        retrying_complete(&self.inner, request, &self.policy)
    }
}
