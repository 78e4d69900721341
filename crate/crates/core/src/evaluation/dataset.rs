//! Line-delimited JSON task datasets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::digest::json_digest;
use crate::pareto::{TaskInstance, TaskKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Parse dataset text, one JSON object per non-blank line. Unknown fields are
/// ignored; records violating instance invariants are rejected with their
/// line number.
pub fn parse_instances(text: &str, path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| DatasetError::Line {
            path: path.to_path_buf(),
            line,
            message,
        };
        if raw.trim().is_empty() {
            continue;
        }
        let instance: TaskInstance = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        instance.validate().map_err(|e| err(e.to_string()))?;
        if !seen.insert(instance.id.clone()) {
            return Err(err(format!("duplicate instance id `{}`", instance.id)));
        }
        out.push(instance);
    }
    Ok(out)
}

pub fn load_instances(path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_instances(&text, path)
}

/// The algebra and gpqa pools of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Pools {
    pub algebra: Vec<TaskInstance>,
    pub gpqa: Vec<TaskInstance>,
}

impl Pools {
    pub fn from_instances(instances: impl IntoIterator<Item = TaskInstance>) -> Self {
        let mut pools = Pools::default();
        for instance in instances {
            match instance.task {
                TaskKind::Algebra => pools.algebra.push(instance),
                TaskKind::Gpqa => pools.gpqa.push(instance),
            }
        }
        pools
    }

    /// Load and merge several dataset files; ids must be unique across them.
    pub fn load(paths: &[PathBuf]) -> Result<Self, DatasetError> {
        let mut all = Vec::new();
        let mut seen = BTreeSet::new();
        for path in paths {
            for instance in load_instances(path)? {
                if !seen.insert(instance.id.clone()) {
                    return Err(DatasetError::Line {
                        path: path.clone(),
                        line: 0,
                        message: format!("instance id `{}` appears in several files", instance.id),
                    });
                }
                all.push(instance);
            }
        }
        Ok(Self::from_instances(all))
    }

    pub fn pool(&self, task: TaskKind) -> &[TaskInstance] {
        match task {
            TaskKind::Algebra => &self.algebra,
            TaskKind::Gpqa => &self.gpqa,
        }
    }

    pub fn find(&self, id: &str) -> Option<&TaskInstance> {
        self.algebra.iter().chain(&self.gpqa).find(|i| i.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.algebra.is_empty() && self.gpqa.is_empty()
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_ignores_unknown_fields() {
        let text = concat!(
            r#"{"id":"t1","task":"algebra","statement":"theorem x","source":"minif2f"}"#,
            "\n\n",
            r#"{"id":"q1","task":"gpqa","statement":"?","answer_key":"A","choices":[{"label":"A","text":"a"}]}"#,
            "\n"
        );
        let instances = parse_instances(text, Path::new("d.jsonl")).unwrap();
        let pools = Pools::from_instances(instances);
        assert_eq!(pools.algebra.len(), 1);
        assert_eq!(pools.gpqa.len(), 1);
        assert!(pools.find("q1").is_some());
    }

    #[test]
    fn invalid_lines_carry_line_numbers() {
        let text = concat!(
            r#"{"id":"t1","task":"algebra","statement":"x"}"#,
            "\n",
            r#"{"id":"q1","task":"gpqa","statement":"?","answer_key":"Z","choices":[{"label":"A","text":"a"}]}"#,
        );
        let err = parse_instances(text, Path::new("d.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("d.jsonl:2:"), "{err}");

        let err = parse_instances("{not json", Path::new("d.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("d.jsonl:1:"), "{err}");

        let dup = concat!(
            r#"{"id":"t","task":"algebra","statement":"x"}"#,
            "\n",
            r#"{"id":"t","task":"algebra","statement":"y"}"#,
        );
        assert!(parse_instances(dup, Path::new("d")).unwrap_err().to_string().contains("duplicate"));
    }
}
