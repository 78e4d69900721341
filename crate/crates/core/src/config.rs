//! The single JSON document describing a run, and `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendProfile, CritiqueBudget, TemplatePaths};
use crate::evaluation::{EvaluationSettings, ProverConfig};
use crate::pareto::OptimizationConfig;
use crate::transfer::PromptRole;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("unknown override key `{0}` (see --help for the list)")]
    UnknownKey(String),
    #[error("malformed override `{0}`; expected key=value")]
    MalformedOverride(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferSettings {
    /// Names of the profiles to evaluate on.
    #[serde(default)]
    pub profiles: Vec<String>,
    /// Prompt file per role.
    #[serde(default)]
    pub prompts: BTreeMap<PromptRole, PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_jump_threshold() -> f64 {
    crate::analysis::DEFAULT_JUMP_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    /// Profile used to embed prompts.
    #[serde(default)]
    pub embedding_profile: Option<String>,
    #[serde(default = "default_jump_threshold")]
    pub jump_threshold: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            embedding_profile: None,
            jump_threshold: default_jump_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub optimization: OptimizationConfig,
    /// Text file holding the seed prompt.
    pub seed_prompt: PathBuf,
    /// JSONL dataset files; instances are split into pools by task.
    pub datasets: Vec<PathBuf>,
    pub prover: ProverConfig,
    pub profiles: Vec<BackendProfile>,
    /// Profile under optimization; it also serves critique and evolution.
    pub optimizer_profile: String,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub templates: TemplatePaths,
    #[serde(default)]
    pub critique_budget: CritiqueBudget,
    #[serde(default)]
    pub transfer: TransferSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

/// Keys accepted by `--set`, with a one-line description each.
/// `profiles.<name>.<field>` addresses a field of the named profile.
pub const OVERRIDE_KEYS: &[(&str, &str)] = &[
    ("optimization.iterations", "number of optimization iterations"),
    ("optimization.sample_n", "algebra instances per minibatch"),
    ("optimization.sample_m", "gpqa instances per minibatch"),
    ("optimization.rng_seed", "seed of the run's random stream"),
    ("optimization.frontier_eval_set", "instance ids scored for frontier membership (JSON list; empty = all)"),
    ("optimization.scalarization_weights.algebra", "weight of algebra accuracy in the best-prompt score"),
    ("optimization.scalarization_weights.gpqa", "weight of gpqa accuracy in the best-prompt score"),
    ("optimization.frontier_capacity", "maximum frontier size (null = unbounded)"),
    ("seed_prompt", "path of the seed prompt text file"),
    ("datasets", "dataset files (JSON list of paths)"),
    ("prover.command", "prover command line (JSON list; `{file}` is the proof file)"),
    ("prover.workdir", "directory the prover runs in"),
    ("prover.timeout_s", "prover wall-clock limit in seconds"),
    ("prover.accept_exit_codes", "exit codes meaning the proof was accepted (JSON list)"),
    ("prover.file_extension", "extension of generated proof files"),
    ("optimizer_profile", "name of the profile being optimized"),
    ("evaluation.parallelism", "concurrent evaluations per batch"),
    ("evaluation.retry.retries", "retries of transient backend errors"),
    ("evaluation.retry.base_delay_ms", "first retry delay; doubles per retry"),
    ("templates.critic", "critic template file"),
    ("templates.critic_no_errors", "critic template used when a batch has no errors"),
    ("templates.evolver", "evolver template file"),
    ("critique_budget.max_bytes", "size limit of the critic prompt"),
    ("critique_budget.statement_chars", "characters of each task statement shown to the critic"),
    ("critique_budget.completion_chars", "characters of each completion shown to the critic"),
    ("critique_budget.message_chars", "characters of each failure message shown to the critic"),
    ("critique_budget.success_examples", "solved examples shown when a batch has no errors"),
    ("transfer.profiles", "profiles evaluated by `transfer` (JSON list of names)"),
    ("transfer.prompts.hand_simple", "prompt file for the simple hand-crafted role"),
    ("transfer.prompts.hand_cot", "prompt file for the chain-of-thought hand-crafted role"),
    ("transfer.prompts.gepa_baseline", "prompt file for the optimization's starting prompt"),
    ("transfer.prompts.gepa_final", "prompt file for the optimization's final prompt"),
    ("transfer.cache_dir", "directory of cached transfer evaluations"),
    ("analysis.embedding_profile", "profile used to embed prompts"),
    ("analysis.jump_threshold", "MAD multiplier for embedding jump detection"),
];

/// Fields settable through `profiles.<name>.<field>`.
pub const PROFILE_OVERRIDE_FIELDS: &[&str] = &[
    "api",
    "endpoint",
    "model_id",
    "auth_env_var",
    "max_tokens",
    "temperature",
    "evolve_temperature",
    "request_timeout_s",
    "embedding_model",
    "embedding_dim",
    "requests_per_minute",
    "script",
    "record_to",
];

/// Help text listing every override key.
pub fn override_help() -> String {
    let width = OVERRIDE_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Override keys for --set key=value:\n");
    for (key, about) in OVERRIDE_KEYS {
        out.push_str(&format!("  {key:width$}  {about}\n"));
    }
    out.push_str(&format!(
        "  profiles.<name>.<field>  one of: {}\n",
        PROFILE_OVERRIDE_FIELDS.join(", ")
    ));
    out.push_str("Values are parsed as JSON when possible, otherwise taken as strings.\n");
    out
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Apply one `key=value` override to a configuration document.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(assignment.to_string()))?;
    let key = key.trim();
    let value = parse_value(raw);
    if let Some(rest) = key.strip_prefix("profiles.") {
        let (name, field) = rest
            .rsplit_once('.')
            .filter(|(_, f)| PROFILE_OVERRIDE_FIELDS.contains(f))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let profiles = doc
            .get_mut("profiles")
            .and_then(Value::as_array_mut)
            .ok_or_else(|| invalid("profiles", "no profiles to override"))?;
        let profile = profiles
            .iter_mut()
            .find(|p| p.get("name").and_then(Value::as_str) == Some(name))
            .ok_or_else(|| invalid(key, format!("no profile named `{name}`")))?;
        profile
            .as_object_mut()
            .ok_or_else(|| invalid("profiles", "profiles must be objects"))?
            .insert(field.to_string(), value);
        return Ok(());
    }
    if !OVERRIDE_KEYS.iter().any(|(k, _)| *k == key) {
        return Err(ConfigError::UnknownKey(key.to_string()));
    }
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(key, "parent is not an object"))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| invalid(key, "parent is not an object"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Read a configuration file, apply overrides and resolve relative paths
    /// against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_with(&text, overrides, base)
    }

    pub fn from_str_with(text: &str, overrides: &[String], base: &Path) -> Result<Self, ConfigError> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut config: RunConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.seed_prompt);
        self.datasets.iter_mut().for_each(fix);
        self.prover.workdir.as_mut().map(fix);
        for profile in &mut self.profiles {
            profile.script.as_mut().map(fix);
            profile.record_to.as_mut().map(fix);
        }
        for p in [
            &mut self.templates.critic,
            &mut self.templates.critic_no_errors,
            &mut self.templates.evolver,
        ] {
            p.as_mut().map(fix);
        }
        self.transfer.prompts.values_mut().for_each(fix);
        self.transfer.cache_dir.as_mut().map(fix);
        // Relative prover arguments other than the placeholder stay as given:
        // they are interpreted by the prover relative to its workdir.
    }

    pub fn profile(&self, name: &str) -> Option<&BackendProfile> {
        self.profiles.iter().find(|p| p.name == name)
    }

    /// Checks that need no file access beyond existence of inputs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.datasets.is_empty() {
            return Err(invalid("datasets", "at least one dataset file is required"));
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if !d.is_file() {
                return Err(invalid(format!("datasets[{i}]"), format!("{} does not exist", d.display())));
            }
        }
        if !self.seed_prompt.is_file() {
            return Err(invalid(
                "seed_prompt",
                format!("{} does not exist", self.seed_prompt.display()),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate()
                .map_err(|e| invalid(format!("profiles[{i}]"), e.to_string()))?;
            if !names.insert(p.name.as_str()) {
                return Err(invalid(format!("profiles[{i}].name"), format!("duplicate profile `{}`", p.name)));
            }
        }
        if self.profile(&self.optimizer_profile).is_none() {
            return Err(invalid(
                "optimizer_profile",
                format!("no profile named `{}`", self.optimizer_profile),
            ));
        }
        for name in &self.transfer.profiles {
            if self.profile(name).is_none() {
                return Err(invalid("transfer.profiles", format!("no profile named `{name}`")));
            }
        }
        if let Some(name) = &self.analysis.embedding_profile {
            if self.profile(name).is_none() {
                return Err(invalid("analysis.embedding_profile", format!("no profile named `{name}`")));
            }
        }
        self.prover.validate().map_err(|m| invalid("prover", m))?;
        if self.evaluation.parallelism == 0 {
            return Err(invalid("evaluation.parallelism", "must be at least 1"));
        }
        if !(self.analysis.jump_threshold.is_finite() && self.analysis.jump_threshold >= 0.0) {
            return Err(invalid("analysis.jump_threshold", "must be a non-negative number"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Value {
        serde_json::json!({
            "seed_prompt": "seed.txt",
            "datasets": ["data.jsonl"],
            "prover": {"command": ["lean", "{file}"]},
            "profiles": [{"name": "m", "api": "scripted"}],
            "optimizer_profile": "m"
        })
    }

    fn leaves(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, sub) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    leaves(&key, sub, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }

    #[test]
    fn override_keys_match_the_schema() {
        let mut config: RunConfig = serde_json::from_value(example()).unwrap();
        for role in PromptRole::ALL {
            config.transfer.prompts.insert(role, "x".into());
        }
        let mut keys = Vec::new();
        leaves("", &serde_json::to_value(&config).unwrap(), &mut keys);
        keys.retain(|k| k != "profiles");
        let declared: Vec<String> = OVERRIDE_KEYS.iter().map(|(k, _)| k.to_string()).collect();
        keys.sort();
        let mut sorted = declared.clone();
        sorted.sort();
        assert_eq!(keys, sorted);

        let profile = serde_json::to_value(&config.profiles[0]).unwrap();
        let mut fields: Vec<&str> = profile.as_object().unwrap().keys().map(String::as_str).collect();
        fields.retain(|f| *f != "name");
        fields.sort();
        let mut allowed = PROFILE_OVERRIDE_FIELDS.to_vec();
        allowed.sort();
        assert_eq!(fields, allowed);
    }

    #[test]
    fn overrides_apply() {
        let mut doc = example();
        apply_override(&mut doc, "optimization.iterations=7").unwrap();
        apply_override(&mut doc, "profiles.m.model_id=gpt").unwrap();
        apply_override(&mut doc, "optimization.scalarization_weights.algebra=0.5").unwrap();
        apply_override(&mut doc, "optimization.scalarization_weights.gpqa=0.5").unwrap();
        let config: RunConfig = serde_json::from_value(doc.clone()).unwrap();
        assert_eq!(config.optimization.iterations, 7);
        assert_eq!(config.profiles[0].model_id, "gpt");
        assert!(matches!(
            apply_override(&mut doc, "optimization.bogus=1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            apply_override(&mut doc, "profiles.m.secret=1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(apply_override(&mut doc, "noequals"), Err(ConfigError::MalformedOverride(_))));
    }

    #[test]
    fn relative_paths_resolve_against_the_config_dir() {
        let config = RunConfig::from_str_with(&example().to_string(), &[], Path::new("/cfg")).unwrap();
        assert_eq!(config.seed_prompt, Path::new("/cfg/seed.txt"));
        assert_eq!(config.datasets[0], Path::new("/cfg/data.jsonl"));
        let err = config.validate().unwrap_err();
        assert!(err.to_string().starts_with("datasets[0]"), "{err}");
    }
}
