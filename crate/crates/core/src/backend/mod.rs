//! Text generation and embedding backends.
//!
//! Every backend is bound to one [`BackendProfile`]. The networked
//! [`HttpBackend`] speaks a chat-completions wire format; the
//! [`ScriptedBackend`] answers from a script and makes whole runs
//! deterministic. [`RecordingBackend`] and [`ReplayBackend`] capture and
//! serve request/response pairs as line-delimited JSON.

mod http;
mod meta;
mod ratelimit;
mod replay;
mod scripted;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::http::HttpBackend;
pub use self::meta::{
    critique, critique_successes, evolve, render_critic_prompt, render_evolver_prompt,
    render_no_error_prompt, strip_code_fences, CritiqueBudget, CritiqueRecord, EvolveError,
    FailureLog, MetaTemplates, TemplatePaths,
};
pub use self::ratelimit::RateLimiter;
pub use self::replay::{CaptureEntry, RecordingBackend, ReplayBackend};
pub use self::scripted::{Responder, ScriptRule, ScriptedBackend, ScriptFile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure talking to `{profile}`: {message}")]
    Transport { profile: String, message: String },
    #[error("`{profile}` answered HTTP {status}: {body}")]
    Status {
        profile: String,
        status: u16,
        body: String,
    },
    #[error("request to `{profile}` exceeded its deadline")]
    Timeout { profile: String },
    #[error("malformed response from `{profile}`: {message}")]
    Malformed { profile: String, message: String },
    #[error("no scripted response for system={system:?} user={user:?}")]
    ScriptedMiss { system: String, user: String },
    #[error("no recorded response for this request in `{capture}`")]
    ReplayMiss { capture: String },
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingSecret(String),
    #[error("profile `{profile}` does not support {what}")]
    Unsupported { profile: String, what: &'static str },
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("invalid backend profile `{profile}`: {message}")]
    InvalidProfile { profile: String, message: String },
    #[error("capture file error: {0}")]
    Capture(String),
}

impl BackendError {
    /// Whether retrying the same request can plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport { .. } | BackendError::Timeout { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApiStyle {
    /// `POST {endpoint}/chat/completions` and `POST {endpoint}/embeddings`.
    #[default]
    Openai,
    /// `POST {endpoint}/messages`.
    Anthropic,
    /// Offline script, see [`ScriptFile`].
    Scripted,
    /// Offline replay of a capture file.
    Replay,
}

fn default_eval_temperature() -> f64 {
    0.0
}
fn default_evolve_temperature() -> f64 {
    0.8
}
fn default_max_tokens() -> u32 {
    4096
}
fn default_request_timeout() -> f64 {
    300.0
}

/// Connection settings of one model. Profiles are data; the secret itself
/// only ever lives in the environment variable named by `auth_env_var`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    #[serde(default)]
    pub api: ApiStyle,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Sampling temperature for task evaluation.
    #[serde(default = "default_eval_temperature")]
    pub temperature: f64,
    /// Sampling temperature for critique and evolution calls.
    #[serde(default = "default_evolve_temperature")]
    pub evolve_temperature: f64,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_s: f64,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub requests_per_minute: Option<f64>,
    /// Script file for `scripted` profiles, capture file for `replay`.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// When set, every request/response pair is appended to this file.
    #[serde(default)]
    pub record_to: Option<PathBuf>,
}

impl BackendProfile {
    pub fn scripted(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            api: ApiStyle::Scripted,
            endpoint: String::new(),
            model_id: "scripted".into(),
            auth_env_var: None,
            max_tokens: default_max_tokens(),
            temperature: default_eval_temperature(),
            evolve_temperature: default_evolve_temperature(),
            request_timeout_s: default_request_timeout(),
            embedding_model: None,
            embedding_dim: None,
            requests_per_minute: None,
            script: None,
            record_to: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |message: &str| {
            Err(BackendError::InvalidProfile {
                profile: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.name.is_empty() {
            return bad("name is empty");
        }
        if self.temperature < 0.0 || self.evolve_temperature < 0.0 {
            return bad("temperatures must be non-negative");
        }
        if self.request_timeout_s.is_nan() || self.request_timeout_s <= 0.0 {
            return bad("request_timeout_s must be positive");
        }
        if matches!(self.requests_per_minute, Some(r) if r.is_nan() || r <= 0.0) {
            return bad("requests_per_minute must be positive");
        }
        match self.api {
            ApiStyle::Openai | ApiStyle::Anthropic => {
                if self.endpoint.is_empty() || self.model_id.is_empty() {
                    return bad("networked profiles need endpoint and model_id");
                }
            }
            ApiStyle::Replay => {
                if self.script.is_none() {
                    return bad("replay profiles need a `script` capture file");
                }
            }
            ApiStyle::Scripted => {}
        }
        Ok(())
    }

    /// Digest of every field that influences model output. Secrets are not
    /// part of the profile, so they cannot leak into cache keys.
    pub fn content_digest(&self) -> String {
        crate::digest::json_digest(&(
            &self.name,
            &self.api,
            &self.endpoint,
            &self.model_id,
            self.max_tokens,
            self.temperature,
        ))
    }
}

/// One chat call: the prompt under test goes in `system`, the task in `user`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChatRequest<'a> {
    pub system: &'a str,
    pub user: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Wall time reported by the backend; scripted backends report their
    /// configured latency so that runs stay reproducible.
    pub latency_ms: u64,
}

pub trait Backend: Send + Sync {
    fn profile(&self) -> &BackendProfile;

    fn chat(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendError>;

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn profile(&self) -> &BackendProfile {
        (**self).profile()
    }
    fn chat(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        (**self).chat(request)
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        (**self).embed(text)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn profile(&self) -> &BackendProfile {
        (**self).profile()
    }
    fn chat(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        (**self).chat(request)
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        (**self).embed(text)
    }
}

/// Evaluation-time generation at the profile's evaluation temperature.
pub fn generate(
    backend: &dyn Backend,
    system: &str,
    user: &str,
) -> Result<Completion, BackendError> {
    backend.chat(&ChatRequest {
        system,
        user,
        temperature: backend.profile().temperature,
    })
}

/// Build the backend described by `profile`, wrapped in a recorder when
/// `record_to` is set.
pub fn from_profile(profile: &BackendProfile) -> Result<Arc<dyn Backend>, BackendError> {
    profile.validate()?;
    let inner: Arc<dyn Backend> = match profile.api {
        ApiStyle::Openai | ApiStyle::Anthropic => Arc::new(HttpBackend::new(profile.clone())?),
        ApiStyle::Scripted => {
            let script = match &profile.script {
                Some(path) => ScriptFile::load(path)?,
                None => ScriptFile::default(),
            };
            Arc::new(ScriptedBackend::from_script(profile.clone(), script))
        }
        ApiStyle::Replay => {
            let path = profile.script.as_ref().expect("validated");
            Arc::new(ReplayBackend::load(profile.clone(), path)?)
        }
    };
    match &profile.record_to {
        Some(path) => Ok(Arc::new(RecordingBackend::create(inner, path)?)),
        None => Ok(inner),
    }
}

/// Tracks the embedding dimension seen across a run and rejects changes.
#[derive(Debug, Default, Clone)]
pub struct DimensionGuard {
    dim: Option<usize>,
}

impl DimensionGuard {
    pub fn check(&mut self, vector: &[f64]) -> Result<(), BackendError> {
        match self.dim {
            None => {
                self.dim = Some(vector.len());
                Ok(())
            }
            Some(expected) if expected == vector.len() => Ok(()),
            Some(expected) => Err(BackendError::DimensionMismatch {
                expected,
                actual: vector.len(),
            }),
        }
    }
}
