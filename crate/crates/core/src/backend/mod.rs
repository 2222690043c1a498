//! The completion-backend contract and its implementations.
//!
//! Rerankers only ever see a [`Completion`]: the generated text plus the top log-probabilities
//! of the first generated token. [`HttpBackend`] speaks the legacy completions protocol
//! (`{model, prompt, max_tokens, temperature, logprobs}`); [`MockBackend`] reads the two prompt
//! templates back and answers from hidden relevance grades.

mod http;
mod limiter;
mod mock;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prompts::{PromptText, TokenCounter};

pub use http::{BackendConfig, HttpBackend};
pub use limiter::{Clock, RateLimiter, SystemClock, VirtualClock};
pub use mock::{MockBackend, MockJudgments};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("provider returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeParams {
    pub max_response_tokens: u32,
    pub temperature: f64,
    /// Number of first-token alternatives to return, 0..=20.
    pub top_logprobs: u32,
}

impl DecodeParams {
    pub const MAX_TOP_LOGPROBS: u32 = 20;

    /// Room for a full `Passage1, ..., Passage10]` answer.
    pub fn listwise() -> Self {
        Self {
            max_response_tokens: 128,
            temperature: 0.0,
            top_logprobs: 0,
        }
    }

    /// A single answer token with its alternatives.
    pub fn pointwise() -> Self {
        Self {
            max_response_tokens: 1,
            temperature: 0.0,
            top_logprobs: 5,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.top_logprobs > Self::MAX_TOP_LOGPROBS {
            return Err(BackendError::Config(format!(
                "top_logprobs must be <= {}, got {}",
                Self::MAX_TOP_LOGPROBS,
                self.top_logprobs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Token string to log-probability (all <= 0) for the first generated token.
    pub first_token_logprobs: BTreeMap<String, f64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            first_token_logprobs: BTreeMap::new(),
        }
    }
}

/// A text-completion model. Instances are shared by concurrent per-query workers.
pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &PromptText, params: &DecodeParams) -> Result<Completion, BackendError>;

    /// The tokenizer used for prompt budgeting.
    fn counter(&self) -> &dyn TokenCounter;

    fn count_tokens(&self, text: &str) -> usize {
        self.counter().count(text)
    }

    /// Whether a listwise answer with no usable identifiers should be requested once more.
    fn retry_unparseable(&self) -> bool {
        false
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, prompt: &PromptText, params: &DecodeParams) -> Result<Completion, BackendError> {
        (**self).complete(prompt, params)
    }

    fn counter(&self) -> &dyn TokenCounter {
        (**self).counter()
    }

    fn retry_unparseable(&self) -> bool {
        (**self).retry_unparseable()
    }
}

/// Returns a fixed completion for every prompt. Useful for fuzzing the answer parsers.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pub completion: Completion,
    counter: crate::prompts::WhitespaceCounter,
}

impl ScriptedBackend {
    pub fn new(completion: Completion) -> Self {
        Self {
            completion,
            counter: crate::prompts::WhitespaceCounter,
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, _prompt: &PromptText, _params: &DecodeParams) -> Result<Completion, BackendError> {
        Ok(self.completion.clone())
    }

    fn counter(&self) -> &dyn TokenCounter {
        &self.counter
    }
}
