//! Scoring one prompt on task instances.
//!
//! GPQA-style items are graded by extracting the final answer label from the
//! completion. Algebra items are graded by an external prover. Every failure
//! mode is encoded in the returned [`EvaluationOutcome`]; nothing here
//! propagates task-level errors.

mod dataset;
mod grading;
mod prover;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{self, Backend, BackendError};
use crate::pareto::{Prompt, ScoreVector, TaskInstance, TaskKind};

pub use dataset::{load_instances, parse_instances, DatasetError, Pools};
pub use grading::{check_answer, extract_final_answer};
pub use prover::{extract_proof_body, proof_source, verify_proof, ProverConfig, OUTPUT_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    WrongAnswer,
    NoAnswerFound,
    ProofRejected,
    ProverTimeout,
    ProverCrash,
    BackendError,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::WrongAnswer => "wrong_answer",
            FailureKind::NoAnswerFound => "no_answer_found",
            FailureKind::ProofRejected => "proof_rejected",
            FailureKind::ProverTimeout => "prover_timeout",
            FailureKind::ProverCrash => "prover_crash",
            FailureKind::BackendError => "backend_error",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDetail {
    pub kind: FailureKind,
    pub message: String,
}

impl FailureDetail {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

/// Result of one (prompt, instance) evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub instance_id: String,
    pub task: TaskKind,
    /// Binary score; a failure detail is present exactly when this is false.
    pub passed: bool,
    pub completion_text: String,
    pub failure_detail: Option<FailureDetail>,
    pub latency_ms: u64,
}

impl EvaluationOutcome {
    fn graded(
        instance: &TaskInstance,
        completion_text: String,
        latency_ms: u64,
        verdict: Result<(), FailureDetail>,
    ) -> Self {
        Self {
            instance_id: instance.id.clone(),
            task: instance.task,
            passed: verdict.is_ok(),
            completion_text,
            failure_detail: verdict.err(),
            latency_ms,
        }
    }

    pub fn score(&self) -> u8 {
        u8::from(self.passed)
    }
}

/// Retry schedule for transient backend failures: after the first attempt,
/// up to `retries` more, sleeping `base_delay_ms * 2^k` before retry `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            retries: 0,
            base_delay_ms: 0,
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }

    /// Run `call`, retrying transient errors per the schedule.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut retry = 0;
        loop {
            match call() {
                Err(e) if e.is_transient() && retry < self.retries => {
                    thread::sleep(self.delay(retry));
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            parallelism: default_parallelism(),
            retry: RetryPolicy::default(),
        }
    }
}

/// The user message for an instance: the statement, followed for
/// multiple-choice items by one `(L) text` line per option.
pub fn render_task(instance: &TaskInstance) -> String {
    let mut text = instance.statement.clone();
    if let Some(choices) = &instance.choices {
        text.push_str("\n\n");
        for choice in choices {
            text.push_str(&format!("({}) {}\n", choice.label, choice.text));
        }
        text.pop();
    }
    text
}

/// Evaluate one prompt on one instance.
pub fn evaluate(
    prompt: &Prompt,
    instance: &TaskInstance,
    backend: &dyn Backend,
    prover: &ProverConfig,
    retry: RetryPolicy,
) -> EvaluationOutcome {
    let user = render_task(instance);
    let completion = match retry.run(|| backend::generate(backend, &prompt.text, &user)) {
        Ok(c) => c,
        Err(e) => {
            return EvaluationOutcome::graded(
                instance,
                String::new(),
                0,
                Err(FailureDetail::new(FailureKind::BackendError, e.to_string())),
            )
        }
    };
    let verdict = match instance.task {
        TaskKind::Gpqa => check_answer(&completion.text, instance),
        TaskKind::Algebra => verify_proof(&completion.text, instance, prover),
    };
    EvaluationOutcome::graded(instance, completion.text, completion.latency_ms, verdict)
}

/// Bundles what is needed to evaluate prompts against one backend.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub backend: &'a dyn Backend,
    pub prover: &'a ProverConfig,
    pub settings: EvaluationSettings,
}

impl<'a> Evaluator<'a> {
    pub fn new(backend: &'a dyn Backend, prover: &'a ProverConfig) -> Self {
        Self {
            backend,
            prover,
            settings: EvaluationSettings::default(),
        }
    }

    pub fn with_settings(mut self, settings: EvaluationSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn evaluate(&self, prompt: &Prompt, instance: &TaskInstance) -> EvaluationOutcome {
        evaluate(prompt, instance, self.backend, self.prover, self.settings.retry)
    }

    /// Evaluate a batch with bounded parallelism. Outcomes come back in
    /// batch order; the score vector is keyed by instance id and therefore
    /// independent of that order.
    pub fn evaluate_batch(
        &self,
        prompt: &Prompt,
        batch: &[&TaskInstance],
    ) -> (ScoreVector, Vec<EvaluationOutcome>) {
        let outcomes = self.evaluate_all(prompt, batch);
        let vector = score_vector(&prompt.id, &outcomes);
        (vector, outcomes)
    }

    fn evaluate_all(&self, prompt: &Prompt, batch: &[&TaskInstance]) -> Vec<EvaluationOutcome> {
        let width = self.settings.parallelism.clamp(1, batch.len().max(1));
        if width == 1 {
            return batch.iter().map(|i| self.evaluate(prompt, i)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<EvaluationOutcome>>> = Mutex::new(vec![None; batch.len()]);
        thread::scope(|scope| {
            for _ in 0..width {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    let Some(instance) = batch.get(idx) else { break };
                    let outcome = self.evaluate(prompt, instance);
                    slots.lock().expect("outcome slots poisoned")[idx] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .expect("outcome slots poisoned")
            .into_iter()
            .map(|o| o.expect("every slot is filled"))
            .collect()
    }
}

pub fn score_vector(prompt_id: &str, outcomes: &[EvaluationOutcome]) -> ScoreVector {
    let mut vector = ScoreVector::new(prompt_id);
    for o in outcomes {
        vector.record(o.instance_id.clone(), o.task, o.passed);
    }
    vector
}
