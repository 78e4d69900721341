use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendProfile, ChatRequest, Completion};

/// Programmatic answer hook: `(system, user) -> reply`.
pub type Responder = Arc<dyn Fn(&str, &str) -> Option<String> + Send + Sync>;

const DEFAULT_EMBEDDING_DIM: usize = 32;

/// A substring rule; both present conditions must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub system_contains: Option<String>,
    #[serde(default)]
    pub user_contains: Option<String>,
    pub response: String,
}

impl ScriptRule {
    fn matches(&self, system: &str, user: &str) -> bool {
        self.system_contains.as_deref().is_none_or(|s| system.contains(s))
            && self.user_contains.as_deref().is_none_or(|u| user.contains(u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEntry {
    pub system: String,
    pub user: String,
    pub response: String,
}

/// On-disk script for `scripted` profiles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub exact: Vec<ExactEntry>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Capture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Capture(format!("{}: {e}", path.display())))
    }
}

/// Deterministic backend answering from exact pairs, a responder hook,
/// substring rules and an optional default, in that order.
#[derive(Clone)]
pub struct ScriptedBackend {
    profile: BackendProfile,
    exact: HashMap<(String, String), String>,
    responder: Option<Responder>,
    rules: Vec<ScriptRule>,
    default: Option<String>,
    latency_ms: u64,
    calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("profile", &self.profile.name)
            .field("exact", &self.exact.len())
            .field("rules", &self.rules.len())
            .finish_non_exhaustive()
    }
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>) -> Self {
        Self::from_script(BackendProfile::scripted(name), ScriptFile::default())
    }

    pub fn from_script(profile: BackendProfile, script: ScriptFile) -> Self {
        Self {
            profile,
            exact: script
                .exact
                .into_iter()
                .map(|e| ((e.system, e.user), e.response))
                .collect(),
            responder: None,
            rules: script.rules,
            default: script.default,
            latency_ms: 0,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_exact(
        mut self,
        system: impl Into<String>,
        user: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        self.exact.insert((system.into(), user.into()), response.into());
        self
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&str, &str) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Arc::new(f));
        self
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn with_latency_ms(mut self, latency_ms: u64) -> Self {
        self.latency_ms = latency_ms;
        self
    }

    pub fn with_profile(mut self, profile: BackendProfile) -> Self {
        self.profile = profile;
        self
    }

    /// Number of chat calls answered so far, shared between clones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn embedding_dim(&self) -> usize {
        self.profile.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM)
    }
}

impl Backend for ScriptedBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn chat(&self, req: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let key = (req.system.to_string(), req.user.to_string());
        let reply = self
            .exact
            .get(&key)
            .cloned()
            .or_else(|| self.responder.as_ref().and_then(|f| f(req.system, req.user)))
            .or_else(|| {
                self.rules
                    .iter()
                    .find(|r| r.matches(req.system, req.user))
                    .map(|r| r.response.clone())
            })
            .or_else(|| self.default.clone());
        match reply {
            Some(text) => {
                self.calls.fetch_add(1, Ordering::SeqCst);
                Ok(Completion {
                    text,
                    latency_ms: self.latency_ms,
                })
            }
            None => Err(BackendError::ScriptedMiss {
                system: key.0,
                user: key.1,
            }),
        }
    }

    /// Hash-seeded pseudo-embedding, uniform in [-1, 1) per coordinate.
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok((0..self.embedding_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(b: &ScriptedBackend, system: &str, user: &str) -> Result<String, BackendError> {
        b.chat(&ChatRequest {
            system,
            user,
            temperature: 0.0,
        })
        .map(|c| c.text)
    }

    #[test]
    fn exact_mapping_and_miss() {
        let b = ScriptedBackend::new("s").with_exact("sys", "usr", "reply");
        assert_eq!(ask(&b, "sys", "usr").unwrap(), "reply");
        assert!(matches!(
            ask(&b, "sys", "other"),
            Err(BackendError::ScriptedMiss { .. })
        ));
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn lookup_precedence() {
        let b = ScriptedBackend::new("s")
            .with_rule(ScriptRule {
                system_contains: None,
                user_contains: Some("x".into()),
                response: "rule".into(),
            })
            .with_responder(|_, user| (user == "xy").then(|| "hook".to_string()))
            .with_default("fallback");
        assert_eq!(ask(&b, "", "xy").unwrap(), "hook");
        assert_eq!(ask(&b, "", "xz").unwrap(), "rule");
        assert_eq!(ask(&b, "", "q").unwrap(), "fallback");
    }

    #[test]
    fn pseudo_embeddings() {
        let b = ScriptedBackend::new("s");
        let a1 = b.embed("alpha").unwrap();
        assert_eq!(a1, b.embed("alpha").unwrap());
        assert_ne!(a1, b.embed("beta").unwrap());
        assert_eq!(a1.len(), DEFAULT_EMBEDDING_DIM);
        assert!(a1.iter().all(|x| (-1.0..1.0).contains(x)));
        assert_eq!(b.embed(""), Err(BackendError::EmptyText));
    }

    #[test]
    fn script_file_parses() {
        let script: ScriptFile = serde_json::from_str(
            r#"{"rules":[{"user_contains":"Q","response":"Final answer: A"}],"default":"x"}"#,
        )
        .unwrap();
        let b = ScriptedBackend::from_script(BackendProfile::scripted("s"), script);
        assert_eq!(ask(&b, "", "Q1").unwrap(), "Final answer: A");
    }
}
