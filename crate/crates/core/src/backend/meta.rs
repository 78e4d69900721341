//! Critic and evolver meta-prompts.
//!
//! The shipped templates in `templates/` are starting points; a run can
//! point at its own files through [`TemplatePaths`]. Placeholders are
//! `{prompt}`, `{failures}`, `{successes}` and `{critique}`, substituted in a
//! single pass so that values containing braces are inserted verbatim.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, BackendError, ChatRequest};
use crate::evaluation::EvaluationOutcome;
use crate::pareto::{ParetoError, Prompt, TaskInstance};

const CRITIC: &str = include_str!("../../templates/critic.txt");
const CRITIC_NO_ERRORS: &str = include_str!("../../templates/critic_no_errors.txt");
const EVOLVER: &str = include_str!("../../templates/evolver.txt");

/// Room kept for the "earlier entries omitted" note.
const OMISSION_RESERVE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaTemplates {
    pub critic: String,
    pub critic_no_errors: String,
    pub evolver: String,
}

impl Default for MetaTemplates {
    fn default() -> Self {
        Self {
            critic: CRITIC.to_string(),
            critic_no_errors: CRITIC_NO_ERRORS.to_string(),
            evolver: EVOLVER.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplatePaths {
    #[serde(default)]
    pub critic: Option<PathBuf>,
    #[serde(default)]
    pub critic_no_errors: Option<PathBuf>,
    #[serde(default)]
    pub evolver: Option<PathBuf>,
}

impl MetaTemplates {
    /// Shipped templates, with any configured file taking precedence.
    pub fn load(paths: &TemplatePaths) -> std::io::Result<Self> {
        let read = |path: &Option<PathBuf>, fallback: &str| match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))),
            None => Ok(fallback.to_string()),
        };
        Ok(Self {
            critic: read(&paths.critic, CRITIC)?,
            critic_no_errors: read(&paths.critic_no_errors, CRITIC_NO_ERRORS)?,
            evolver: read(&paths.evolver, EVOLVER)?,
        })
    }
}

/// Substitute `{name}` placeholders in one left-to-right pass. Unknown
/// placeholders are left as written.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find_map(|(name, value)| {
            let token_len = name.len() + 2;
            (tail.len() >= token_len
                && tail.as_bytes()[token_len - 1] == b'}'
                && &tail[1..token_len - 1] == *name)
                .then_some((token_len, *value))
        });
        match hit {
            Some((len, value)) => {
                out.push_str(value);
                rest = &tail[len..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Size limits for the critic's meta-prompt, in bytes for the whole prompt
/// and in characters for each excerpt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CritiqueBudget {
    pub max_bytes: usize,
    pub statement_chars: usize,
    pub completion_chars: usize,
    pub message_chars: usize,
    /// Solved examples shown to the no-error critic.
    pub success_examples: usize,
}

impl Default for CritiqueBudget {
    fn default() -> Self {
        Self {
            max_bytes: 8 * 1024,
            statement_chars: 500,
            completion_chars: 600,
            message_chars: 300,
            success_examples: 3,
        }
    }
}

/// An evaluated instance as shown to the critic.
#[derive(Debug, Clone, Copy)]
pub struct FailureLog<'a> {
    pub instance: &'a TaskInstance,
    pub outcome: &'a EvaluationOutcome,
}

fn head(text: &str, chars: usize) -> String {
    match text.char_indices().nth(chars) {
        Some((cut, _)) => format!("{}…", &text[..cut]),
        None => text.to_string(),
    }
}

fn tail(text: &str, chars: usize) -> String {
    let count = text.chars().count();
    if count <= chars {
        return text.to_string();
    }
    let (cut, _) = text.char_indices().nth(count - chars).expect("within bounds");
    format!("…{}", &text[cut..])
}

fn entry(n: usize, log: &FailureLog<'_>, budget: &CritiqueBudget) -> String {
    let mut text = format!("[{n}] {} instance `{}`\n", log.instance.task, log.instance.id);
    if let Some(detail) = &log.outcome.failure_detail {
        text.push_str(&format!(
            "failure: {}: {}\n",
            detail.kind,
            head(detail.message.trim(), budget.message_chars)
        ));
    }
    text.push_str(&format!(
        "problem: {}\noutput: {}\n",
        head(log.instance.statement.trim(), budget.statement_chars),
        tail(log.outcome.completion_text.trim(), budget.completion_chars)
    ));
    text
}

/// Build the list section: most recent entry first, dropping older entries
/// once the remaining byte allowance is used up.
fn log_section(logs: &[FailureLog<'_>], budget: &CritiqueBudget, allowance: usize) -> String {
    let entries: Vec<String> = logs
        .iter()
        .rev()
        .enumerate()
        .map(|(i, log)| entry(i + 1, log, budget))
        .collect();
    let mut section = String::new();
    let mut kept = 0;
    for (i, e) in entries.iter().enumerate() {
        let sep = usize::from(!section.is_empty());
        let is_last = i + 1 == entries.len();
        let reserve = if is_last { 0 } else { OMISSION_RESERVE };
        if section.len() + sep + e.len() + reserve > allowance {
            break;
        }
        if sep == 1 {
            section.push('\n');
        }
        section.push_str(e);
        kept += 1;
    }
    let omitted = entries.len() - kept;
    if omitted > 0 {
        let note = format!("[{omitted} earlier entries omitted]\n");
        if section.len() + note.len() < allowance {
            if !section.is_empty() {
                section.push('\n');
            }
            section.push_str(&note);
        }
    }
    section
}

fn render_with_logs(
    template: &str,
    placeholder: &str,
    prompt: &Prompt,
    logs: &[FailureLog<'_>],
    budget: &CritiqueBudget,
) -> (String, String) {
    let base = fill(template, &[("prompt", &prompt.text), (placeholder, "")]).len();
    let section = log_section(logs, budget, budget.max_bytes.saturating_sub(base));
    let meta = fill(template, &[("prompt", &prompt.text), (placeholder, &section)]);
    (meta, section)
}

/// Critic meta-prompt for a failed minibatch. Returns the prompt and the
/// failure section (the error-log digest).
pub fn render_critic_prompt(
    templates: &MetaTemplates,
    prompt: &Prompt,
    failures: &[FailureLog<'_>],
    budget: &CritiqueBudget,
) -> (String, String) {
    render_with_logs(&templates.critic, "failures", prompt, failures, budget)
}

/// Critic meta-prompt for a minibatch without failures.
pub fn render_no_error_prompt(
    templates: &MetaTemplates,
    prompt: &Prompt,
    successes: &[FailureLog<'_>],
    budget: &CritiqueBudget,
) -> (String, String) {
    render_with_logs(&templates.critic_no_errors, "successes", prompt, successes, budget)
}

pub fn render_evolver_prompt(templates: &MetaTemplates, prompt: &Prompt, critique: &CritiqueRecord) -> String {
    fill(
        &templates.evolver,
        &[("prompt", &prompt.text), ("critique", &critique.critique_text)],
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueRecord {
    pub prompt_id: String,
    pub iteration: u32,
    /// The outcome summaries the critic was shown.
    pub error_log_digest: String,
    pub critique_text: String,
}

fn ask(backend: &dyn Backend, user: &str) -> Result<String, BackendError> {
    backend
        .chat(&ChatRequest {
            system: "",
            user,
            temperature: backend.profile().evolve_temperature,
        })
        .map(|c| c.text)
}

fn critique_from(
    backend: &dyn Backend,
    prompt: &Prompt,
    (meta, digest): (String, String),
    iteration: u32,
) -> Result<CritiqueRecord, BackendError> {
    let critique_text = ask(backend, &meta)?;
    if critique_text.trim().is_empty() {
        return Err(BackendError::Malformed {
            profile: backend.profile().name.clone(),
            message: "critic returned an empty critique".into(),
        });
    }
    Ok(CritiqueRecord {
        prompt_id: prompt.id.clone(),
        iteration,
        error_log_digest: digest,
        critique_text,
    })
}

/// Ask the critic to diagnose `failures` of `prompt`.
pub fn critique(
    backend: &dyn Backend,
    templates: &MetaTemplates,
    prompt: &Prompt,
    failures: &[FailureLog<'_>],
    budget: &CritiqueBudget,
    iteration: u32,
) -> Result<CritiqueRecord, BackendError> {
    let rendered = render_critic_prompt(templates, prompt, failures, budget);
    critique_from(backend, prompt, rendered, iteration)
}

/// Critique for an error-free minibatch, asking for more general guidance.
pub fn critique_successes(
    backend: &dyn Backend,
    templates: &MetaTemplates,
    prompt: &Prompt,
    successes: &[FailureLog<'_>],
    budget: &CritiqueBudget,
    iteration: u32,
) -> Result<CritiqueRecord, BackendError> {
    let rendered = render_no_error_prompt(templates, prompt, successes, budget);
    critique_from(backend, prompt, rendered, iteration)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("evolver returned an empty prompt")]
    EmptyReply,
    #[error("critique belongs to `{critique}`, not `{prompt}`")]
    MismatchedCritique { prompt: String, critique: String },
    #[error(transparent)]
    InvalidChild(#[from] ParetoError),
}

/// Remove one pair of surrounding code fences (with optional language tag)
/// and surrounding whitespace.
pub fn strip_code_fences(reply: &str) -> &str {
    let trimmed = reply.trim();
    let Some(inner) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let inner = match inner.find('\n') {
        Some(nl) => &inner[nl + 1..],
        None => inner,
    };
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

/// Ask the evolver for a revised prompt and wrap it as the child of `prompt`.
pub fn evolve(
    backend: &dyn Backend,
    templates: &MetaTemplates,
    prompt: &Prompt,
    critique: &CritiqueRecord,
    child_id: impl Into<String>,
    iteration: u32,
) -> Result<Prompt, EvolveError> {
    if critique.prompt_id != prompt.id {
        return Err(EvolveError::MismatchedCritique {
            prompt: prompt.id.clone(),
            critique: critique.prompt_id.clone(),
        });
    }
    let reply = ask(backend, &render_evolver_prompt(templates, prompt, critique))?;
    let text = strip_code_fences(&reply);
    if text.is_empty() {
        return Err(EvolveError::EmptyReply);
    }
    Ok(Prompt::evolved(child_id, text, prompt, iteration)?)
}
