use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ApiStyle, Backend, BackendError, BackendProfile, ChatRequest, Completion, RateLimiter};

const ANTHROPIC_VERSION: &str = "2023-06-01";

/// JSON-over-HTTP backend with per-vendor request adapters.
pub struct HttpBackend {
    profile: BackendProfile,
    agent: ureq::Agent,
    limiter: Option<RateLimiter>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("profile", &self.profile.name)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(profile: BackendProfile) -> Result<Self, BackendError> {
        profile.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(profile.request_timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = profile
            .requests_per_minute
            .map(|rpm| RateLimiter::per_minute(rpm, 1.0));
        Ok(Self {
            profile,
            agent,
            limiter,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.profile.endpoint.trim_end_matches('/'), path)
    }

    fn secret(&self) -> Result<Option<String>, BackendError> {
        match &self.profile.auth_env_var {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::MissingSecret(var.clone())),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<(Value, u64), BackendError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let name = &self.profile.name;
        let mut request = self
            .agent
            .post(&self.url(path))
            .header("content-type", "application/json");
        if let Some(key) = self.secret()? {
            request = match self.profile.api {
                ApiStyle::Anthropic => request
                    .header("x-api-key", &key)
                    .header("anthropic-version", ANTHROPIC_VERSION),
                _ => request.header("authorization", &format!("Bearer {key}")),
            };
        }
        let payload = serde_json::to_vec(body).expect("request body serializes");
        let started = Instant::now();
        let mut response = request.send(&payload[..]).map_err(|e| self.transport(e))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport(e))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status {
                profile: name.clone(),
                status,
                body: truncate(&text, 2048),
            });
        }
        let value = serde_json::from_str(&text).map_err(|e| BackendError::Malformed {
            profile: name.clone(),
            message: e.to_string(),
        })?;
        Ok((value, latency_ms))
    }

    fn transport(&self, err: ureq::Error) -> BackendError {
        let profile = self.profile.name.clone();
        match err {
            ureq::Error::Timeout(_) => BackendError::Timeout { profile },
            other => BackendError::Transport {
                profile,
                message: other.to_string(),
            },
        }
    }

    fn malformed(&self, message: &str) -> BackendError {
        BackendError::Malformed {
            profile: self.profile.name.clone(),
            message: message.to_string(),
        }
    }
}

/// Request body for the chat-completions shape.
pub(crate) fn openai_chat_body(profile: &BackendProfile, req: &ChatRequest<'_>) -> Value {
    let mut messages = Vec::with_capacity(2);
    if !req.system.is_empty() {
        messages.push(json!({"role": "system", "content": req.system}));
    }
    messages.push(json!({"role": "user", "content": req.user}));
    json!({
        "model": profile.model_id,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": profile.max_tokens,
    })
}

pub(crate) fn anthropic_body(profile: &BackendProfile, req: &ChatRequest<'_>) -> Value {
    let mut body = json!({
        "model": profile.model_id,
        "max_tokens": profile.max_tokens,
        "temperature": req.temperature,
        "messages": [{"role": "user", "content": req.user}],
    });
    if !req.system.is_empty() {
        body["system"] = Value::String(req.system.to_string());
    }
    body
}

impl Backend for HttpBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn chat(&self, req: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let (text, latency_ms) = match self.profile.api {
            ApiStyle::Anthropic => {
                let (value, latency) = self.post("messages", &anthropic_body(&self.profile, req))?;
                let blocks = value["content"]
                    .as_array()
                    .ok_or_else(|| self.malformed("missing `content` array"))?;
                let text: String = blocks
                    .iter()
                    .filter(|b| b["type"] == "text")
                    .filter_map(|b| b["text"].as_str())
                    .collect();
                (text, latency)
            }
            _ => {
                let (value, latency) =
                    self.post("chat/completions", &openai_chat_body(&self.profile, req))?;
                let text = value["choices"][0]["message"]["content"]
                    .as_str()
                    .ok_or_else(|| self.malformed("missing `choices[0].message.content`"))?
                    .to_string();
                (text, latency)
            }
        };
        Ok(Completion { text, latency_ms })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        if self.profile.api == ApiStyle::Anthropic {
            return Err(BackendError::Unsupported {
                profile: self.profile.name.clone(),
                what: "embeddings",
            });
        }
        let model = self
            .profile
            .embedding_model
            .as_deref()
            .unwrap_or(&self.profile.model_id);
        let (value, _) = self.post("embeddings", &json!({"model": model, "input": text}))?;
        let vector: Vec<f64> = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| self.malformed("missing `data[0].embedding`"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| self.malformed("non-numeric embedding entry")))
            .collect::<Result<_, _>>()?;
        if let Some(expected) = self.profile.embedding_dim {
            if vector.len() != expected {
                return Err(BackendError::DimensionMismatch {
                    expected,
                    actual: vector.len(),
                });
            }
        }
        Ok(vector)
    }
}

pub(crate) fn truncate(text: &str, max_bytes: usize) -> String {
    if text.len() <= max_bytes {
        return text.to_string();
    }
    let mut cut = max_bytes;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}…", &text[..cut])
}
