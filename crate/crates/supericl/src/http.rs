//! HTTP adapters: a remote plug-in classifier and a text-completion provider.
//!
//! Classifier contract: `POST <base>/predict` with `{"fields": {key: text}}`,
//! answered by `{"label": str, "confidence": number}`.
//!
//! Provider contract: `POST <endpoint>` with `{"model", "prompt",
//! "max_tokens", "temperature", "stop"}`, answered by `{"text": str, "usage":
//! {"prompt_tokens": int, "completion_tokens": int}}`. The bearer token is
//! read from an environment variable, never from config files.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use supericl_core::{
    apply_stop_sequences, CompletionBackend, CompletionRequest, CompletionResponse, LabeledExample,
    LlmError, Plugin, PluginError, PluginPrediction, TaskSchema,
};

pub const DEFAULT_API_KEY_ENV: &str = "SUPERICL_API_KEY";

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            cond: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

pub struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

enum PostError {
    Timeout,
    Transport(String),
}

struct Reply {
    status: u16,
    body: String,
    retry_after: Option<u64>,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: String,
) -> Result<Reply, PostError> {
    let mut req = agent.post(url).header("content-type", "application/json");
    if let Some(token) = bearer {
        req = req.header("authorization", &format!("Bearer {token}"));
    }
    let mut resp = req.send(body).map_err(|e| match e {
        ureq::Error::Timeout(_) => PostError::Timeout,
        other => PostError::Transport(other.to_string()),
    })?;
    let status = resp.status().as_u16();
    let retry_after = resp
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|secs| secs * 1000);
    let body = resp.body_mut().read_to_string().map_err(|e| match e {
        ureq::Error::Timeout(_) => PostError::Timeout,
        other => PostError::Transport(other.to_string()),
    })?;
    Ok(Reply {
        status,
        body,
        retry_after,
    })
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    fields: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ClassifyReply {
    label: String,
    confidence: f64,
}

/// Plug-in served over HTTP.
pub struct HttpClassifier {
    url: String,
    schema: TaskSchema,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl HttpClassifier {
    pub fn new(
        base_url: &str,
        schema: TaskSchema,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Self {
        Self {
            url: format!("{}/predict", base_url.trim_end_matches('/')),
            schema,
            agent: agent(timeout),
            in_flight: Semaphore::new(max_in_flight),
        }
    }
}

impl Plugin for HttpClassifier {
    fn predict(&self, example: &LabeledExample) -> Result<PluginPrediction, PluginError> {
        let body = serde_json::to_string(&ClassifyRequest {
            fields: &example.values,
        })
        .expect("request serializes");
        let reply = {
            let _permit = self.in_flight.acquire();
            post_json(&self.agent, &self.url, None, body).map_err(|e| match e {
                PostError::Timeout => PluginError::Transport("timed out".into()),
                PostError::Transport(m) => PluginError::Transport(m),
            })?
        };
        if reply.status != 200 {
            return Err(PluginError::BadResponse(format!(
                "status {}: {}",
                reply.status, reply.body
            )));
        }
        let parsed: ClassifyReply = serde_json::from_str(&reply.body)
            .map_err(|e| PluginError::BadResponse(e.to_string()))?;
        let pred = PluginPrediction {
            label: parsed.label,
            confidence: parsed.confidence,
        };
        pred.check(&self.schema)
            .map_err(|e| PluginError::BadResponse(e.to_string()))?;
        Ok(pred)
    }
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct ProviderReply {
    text: String,
    #[serde(default)]
    usage: Usage,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Completion provider speaking the generic JSON contract.
///
/// 429 maps to `RateLimited`, 5xx to a retryable transport error and any
/// other non-200 status to `Provider`.
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl HttpProvider {
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent: agent(timeout),
            in_flight: Semaphore::new(max_in_flight),
        }
    }

    /// Reads the token from `env_var`; an unset variable means no auth header.
    pub fn from_env(
        endpoint: &str,
        env_var: &str,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Self {
        Self::new(
            endpoint,
            std::env::var(env_var).ok(),
            max_in_flight,
            timeout,
        )
    }
}

impl CompletionBackend for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        request.check()?;
        let body = serde_json::to_string(&ProviderRequest {
            model: &request.model_id,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop: &request.stop_sequences,
        })
        .expect("request serializes");
        let reply = {
            let _permit = self.in_flight.acquire();
            post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), body).map_err(|e| {
                match e {
                    PostError::Timeout => LlmError::Timeout,
                    PostError::Transport(m) => LlmError::Transport(m),
                }
            })?
        };
        match reply.status {
            200 => {}
            429 => {
                return Err(LlmError::RateLimited {
                    retry_after_ms: reply.retry_after,
                })
            }
            s @ 500..=599 => {
                return Err(LlmError::Transport(format!(
                    "server error {s}: {}",
                    reply.body
                )))
            }
            status => {
                return Err(LlmError::Provider {
                    status,
                    body: reply.body,
                })
            }
        }
        let parsed: ProviderReply =
            serde_json::from_str(&reply.body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        Ok(CompletionResponse {
            text: apply_stop_sequences(&parsed.text, &request.stop_sequences),
            prompt_tokens: parsed.usage.prompt_tokens,
            completion_tokens: parsed.usage.completion_tokens,
            from_cache: false,
        })
    }
}
