use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendProfile, ChatRequest, Completion};

/// One captured exchange, one JSON object per line of a capture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum CaptureEntry {
    Chat {
        profile: String,
        system: String,
        user: String,
        temperature: f64,
        response: String,
        latency_ms: u64,
    },
    Embed {
        profile: String,
        text: String,
        vector: Vec<f64>,
    },
}

/// Forwards to an inner backend and appends every successful exchange to a
/// capture file.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    out: Mutex<File>,
}

impl RecordingBackend {
    pub fn create(inner: Arc<dyn Backend>, path: &Path) -> Result<Self, BackendError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Capture(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            out: Mutex::new(out),
        })
    }

    fn append(&self, entry: &CaptureEntry) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(entry).expect("capture entry serializes");
        line.push('\n');
        let mut out = self.out.lock().expect("capture file poisoned");
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| BackendError::Capture(e.to_string()))
    }
}

impl Backend for RecordingBackend {
    fn profile(&self) -> &BackendProfile {
        self.inner.profile()
    }

    fn chat(&self, req: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let completion = self.inner.chat(req)?;
        self.append(&CaptureEntry::Chat {
            profile: self.profile().name.clone(),
            system: req.system.to_string(),
            user: req.user.to_string(),
            temperature: req.temperature,
            response: completion.text.clone(),
            latency_ms: completion.latency_ms,
        })?;
        Ok(completion)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let vector = self.inner.embed(text)?;
        self.append(&CaptureEntry::Embed {
            profile: self.profile().name.clone(),
            text: text.to_string(),
            vector: vector.clone(),
        })?;
        Ok(vector)
    }
}

/// Serves responses from a capture file; unknown requests are errors.
#[derive(Debug)]
pub struct ReplayBackend {
    profile: BackendProfile,
    capture: PathBuf,
    chats: HashMap<(String, String), Completion>,
    embeddings: HashMap<String, Vec<f64>>,
}

impl ReplayBackend {
    /// Load every entry of `path`. Entries recorded under a different profile
    /// name are ignored; for repeated requests the first recording wins.
    pub fn load(profile: BackendProfile, path: &Path) -> Result<Self, BackendError> {
        let file = File::open(path)
            .map_err(|e| BackendError::Capture(format!("{}: {e}", path.display())))?;
        let mut chats = HashMap::new();
        let mut embeddings = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Capture(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CaptureEntry = serde_json::from_str(&line).map_err(|e| {
                BackendError::Capture(format!("{}:{}: {e}", path.display(), idx + 1))
            })?;
            match entry {
                CaptureEntry::Chat {
                    profile: p,
                    system,
                    user,
                    response,
                    latency_ms,
                    ..
                } if p == profile.name => {
                    chats.entry((system, user)).or_insert(Completion {
                        text: response,
                        latency_ms,
                    });
                }
                CaptureEntry::Embed {
                    profile: p,
                    text,
                    vector,
                } if p == profile.name => {
                    embeddings.entry(text).or_insert(vector);
                }
                _ => {}
            }
        }
        Ok(Self {
            profile,
            capture: path.to_path_buf(),
            chats,
            embeddings,
        })
    }

    fn miss(&self) -> BackendError {
        BackendError::ReplayMiss {
            capture: self.capture.display().to_string(),
        }
    }
}

impl Backend for ReplayBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn chat(&self, req: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        self.chats
            .get(&(req.system.to_string(), req.user.to_string()))
            .cloned()
            .ok_or_else(|| self.miss())
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.embeddings.get(text).cloned().ok_or_else(|| self.miss())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("capture.jsonl");
        let live = Arc::new(ScriptedBackend::new("m").with_exact("s", "u", "hello"));
        let recorder = RecordingBackend::create(live, &path).unwrap();
        let req = ChatRequest {
            system: "s",
            user: "u",
            temperature: 0.0,
        };
        assert_eq!(recorder.chat(&req).unwrap().text, "hello");
        let vector = recorder.embed("text").unwrap();

        let replay = ReplayBackend::load(BackendProfile::scripted("m"), &path).unwrap();
        assert_eq!(replay.chat(&req).unwrap().text, "hello");
        assert_eq!(replay.embed("text").unwrap(), vector);
        assert!(matches!(
            replay.chat(&ChatRequest { user: "other", ..req }),
            Err(BackendError::ReplayMiss { .. })
        ));

        let other = ReplayBackend::load(BackendProfile::scripted("n"), &path).unwrap();
        assert!(other.chat(&req).is_err());
    }
}
