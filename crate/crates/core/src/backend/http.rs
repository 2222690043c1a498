//! Blocking client for OpenAI-compatible legacy completion endpoints.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::limiter::{Clock, RateLimiter, SystemClock};
use super::{Backend, BackendError, Completion, DecodeParams};
use crate::prompts::{ByteApproxCounter, PromptText, TokenCounter};

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    5
}
fn default_rpm() -> u32 {
    60
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_backoff_max_ms() -> u64 {
    30_000
}

/// Connection settings. The API key itself is read from the environment variable named by
/// `api_key_env`, never from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Full URL of the completions endpoint, e.g. `https://api.openai.com/v1/completions`.
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            requests_per_minute: default_rpm(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_max_ms: default_backoff_max_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.requests_per_minute == 0 {
            return Err(BackendError::Config("requests_per_minute must be > 0".into()));
        }
        if self.endpoint_url.is_empty() || self.model_name.is_empty() {
            return Err(BackendError::Config("endpoint_url and model_name are required".into()));
        }
        if self.timeout_secs == 0 {
            return Err(BackendError::Config("timeout_secs must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    logprobs: u32,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    top_logprobs: Option<Vec<Option<BTreeMap<String, f64>>>>,
}

/// Maps a provider body onto a [`Completion`], keeping at most `top_k` alternatives.
fn parse_completion(body: &str, top_k: u32) -> Result<Completion, BackendError> {
    let response: CompletionResponse = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let choice = response
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let first = choice
        .logprobs
        .and_then(|l| l.top_logprobs)
        .and_then(|tops| tops.into_iter().next().flatten())
        .unwrap_or_default();

    let mut alternatives = Vec::with_capacity(first.len());
    for (token, lp) in first {
        if !lp.is_finite() && lp != f64::NEG_INFINITY {
            return Err(BackendError::Protocol(format!("log-probability {lp} for {token:?}")));
        }
        // Providers occasionally round a near-certain token to a tiny positive value.
        if lp > 1e-6 {
            return Err(BackendError::Protocol(format!(
                "positive log-probability {lp} for {token:?}"
            )));
        }
        alternatives.push((token, lp.min(0.0)));
    }
    alternatives.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    alternatives.truncate(top_k as usize);
    Ok(Completion {
        text: choice.text,
        first_token_logprobs: alternatives.into_iter().collect(),
    })
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

enum Attempt {
    Done(Completion),
    Retry {
        error: BackendError,
        retry_after: Option<Duration>,
    },
    Fatal(BackendError),
}

pub struct HttpBackend {
    config: BackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    counter: ByteApproxCounter,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Self::with_clock(config, Arc::new(SystemClock::new()))
    }

    /// Uses `clock` for rate limiting and backoff sleeps. Socket timeouts stay in real time.
    pub fn with_clock(config: BackendConfig, clock: Arc<dyn Clock>) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            tracing::warn!(var = %config.api_key_env, "API key variable unset; sending requests without authorization");
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            limiter: RateLimiter::per_minute(config.requests_per_minute, clock.clone()),
            config,
            api_key,
            agent,
            clock,
            counter: ByteApproxCounter,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let base = self.config.backoff_base_ms;
        let exp = base.saturating_mul(1u64 << attempt.min(30));
        let jitter = if base > 0 {
            rand::rng().random_range(0..=base)
        } else {
            0
        };
        let delay = Duration::from_millis(exp.saturating_add(jitter).min(self.config.backoff_max_ms));
        retry_after.map_or(delay, |ra| ra.max(delay))
    }

    fn attempt(&self, body: &CompletionRequest<'_>, top_k: u32, attempts: u32) -> Attempt {
        let mut request = self.agent.post(&self.config.endpoint_url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    error: BackendError::Transport {
                        attempts,
                        message: e.to_string(),
                    },
                    retry_after: None,
                }
            }
        };
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    error: BackendError::Transport {
                        attempts,
                        message: e.to_string(),
                    },
                    retry_after: None,
                }
            }
        };
        if (200..300).contains(&status) {
            return match parse_completion(&text, top_k) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            };
        }
        let error = if status == 429 {
            BackendError::RateLimited { attempts }
        } else {
            BackendError::Status {
                status,
                attempts,
                body: text.chars().take(500).collect(),
            }
        };
        if retryable(status) {
            Attempt::Retry { error, retry_after }
        } else {
            Attempt::Fatal(error)
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &PromptText, params: &DecodeParams) -> Result<Completion, BackendError> {
        params.validate()?;
        let body = CompletionRequest {
            model: &self.config.model_name,
            prompt: &prompt.text,
            max_tokens: params.max_response_tokens,
            temperature: params.temperature,
            logprobs: params.top_logprobs,
        };
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            match self.attempt(&body, params.top_logprobs, attempt + 1) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { error, retry_after } => {
                    if attempt >= self.config.max_retries {
                        return Err(error);
                    }
                    tracing::debug!(attempt, %error, "retrying completion request");
                    self.clock.sleep(self.backoff(attempt, retry_after));
                    attempt += 1;
                }
            }
        }
    }

    fn counter(&self) -> &dyn TokenCounter {
        &self.counter
    }

    fn retry_unparseable(&self) -> bool {
        true
    }
}
