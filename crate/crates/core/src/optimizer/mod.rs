//! The optimization loop.
//!
//! Each iteration samples a parent from the frontier, scores it on a fresh
//! minibatch, has the critic diagnose the minibatch outcomes, has the
//! evolver rewrite the parent, scores the child on the frontier evaluation
//! set and offers it to the frontier. The population is then the frontier
//! plus the new child.
//!
//! The only randomness is one ChaCha8 stream, consumed by parent sampling
//! and then batch sampling, in that order. Evaluation never draws from it,
//! so concurrent evaluation cannot perturb the stream. Every iteration is
//! appended to the run log together with the stream position, which is
//! what makes resume exact.

mod log;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    critique, critique_successes, evolve, Backend, BackendError, CritiqueBudget, CritiqueRecord,
    EvolveError, FailureLog, MetaTemplates,
};
use crate::digest::{parts_digest, sha256_hex};
use crate::evaluation::{
    score_vector, EvaluationOutcome, EvaluationSettings, Evaluator, FailureKind, Pools,
    ProverConfig,
};
use crate::pareto::{
    sample_batch, sample_candidate, Frontier, OptimizationConfig, ParetoError, Prompt,
    ScoreVector, TaskAccuracy, TaskInstance,
};

pub use self::log::{parse_log, read_log, LogHeader, ParsedLog, RunLogWriter, LOG_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Pareto(#[from] ParetoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Log {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dataset pools differ from the logged run (log {logged}, supplied {supplied})")]
    PoolMismatch { logged: String, supplied: String },
    #[error("configuration differs from the logged run:\n  {}", .0.join("\n  "))]
    ConfigMismatch(Vec<String>),
    #[error("run already completed {0} iterations")]
    Finished(u32),
    #[error("invalid prover configuration: {0}")]
    Prover(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub prompt_id: String,
    pub by_task: TaskAccuracy,
}

/// Full trace of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: u32,
    pub status: IterationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub sampled_prompt_id: String,
    pub batch_instance_ids: Vec<String>,
    /// The sampled prompt's outcomes on the minibatch.
    pub score_vector: ScoreVector,
    pub error_instance_ids: Vec<String>,
    pub critique: Option<CritiqueRecord>,
    pub child: Option<Prompt>,
    /// The child's outcomes on the frontier evaluation set.
    pub child_scores: Option<ScoreVector>,
    pub child_admitted: bool,
    pub frontier_after: Vec<FrontierEntry>,
    pub rng_state_digest: String,
    /// ChaCha8 word position after this iteration's draws, in decimal.
    pub rng_word_pos: String,
}

impl RunRecord {
    /// Self-consistency: the error set is exactly the zero-score set of the
    /// minibatch, and successful iterations carry their child.
    pub fn validate(&self) -> Result<(), String> {
        let failed: BTreeSet<&String> = self
            .score_vector
            .algebra
            .iter()
            .chain(&self.score_vector.gpqa)
            .filter(|(_, &passed)| !passed)
            .map(|(id, _)| id)
            .collect();
        let listed: BTreeSet<&String> = self.error_instance_ids.iter().collect();
        if failed != listed || listed.len() != self.error_instance_ids.len() {
            return Err(format!(
                "iteration {}: error_instance_ids do not match the zero-score instances",
                self.iteration
            ));
        }
        let complete = self.critique.is_some() && self.child.is_some() && self.child_scores.is_some();
        match self.status {
            IterationStatus::Ok if !complete => Err(format!(
                "iteration {}: successful record lacks critique, child or child scores",
                self.iteration
            )),
            IterationStatus::Failed if self.error.is_none() => {
                Err(format!("iteration {}: failed record lacks an error", self.iteration))
            }
            _ => Ok(()),
        }
    }

    fn word_pos(&self) -> Result<u128, String> {
        self.rng_word_pos
            .parse()
            .map_err(|_| format!("iteration {}: bad rng_word_pos", self.iteration))
    }
}

fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut bytes = rng.get_seed().to_vec();
    bytes.extend_from_slice(&rng.get_stream().to_le_bytes());
    bytes.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    sha256_hex(bytes)
}

/// Mutable state of a run. `records` is append-only.
#[derive(Debug, Clone)]
pub struct RunState {
    pub config: OptimizationConfig,
    pub seed: Prompt,
    pub seed_scores: ScoreVector,
    pub population: Vec<Prompt>,
    pub frontier: Frontier,
    pub completed_iterations: u32,
    pub records: Vec<RunRecord>,
    rng: ChaCha8Rng,
    /// Outcomes keyed by (prompt text digest, instance id).
    cache: HashMap<(String, String), EvaluationOutcome>,
}

impl PartialEq for RunState {
    /// Equality over the logical state; the evaluation cache is excluded.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.seed_scores == other.seed_scores
            && self.population == other.population
            && self.frontier == other.frontier
            && self.completed_iterations == other.completed_iterations
            && self.records == other.records
            && self.rng == other.rng
    }
}

impl RunState {
    pub fn header(&self, pools: &Pools) -> LogHeader {
        LogHeader {
            format_version: LOG_FORMAT_VERSION,
            config: self.config.clone(),
            pool_digest: pools.digest(),
            seed_prompt: self.seed.clone(),
            seed_scores: self.seed_scores.clone(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.completed_iterations >= self.config.iterations
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rebuild the state a log describes by replaying its records from the
    /// seed.
    pub fn replay(header: &LogHeader, records: &[RunRecord]) -> Result<Self, String> {
        let config = header.config.clone();
        let mut frontier = Frontier::new(config.frontier_capacity, config.scalarization_weights);
        frontier
            .update(header.seed_prompt.clone(), header.seed_scores.clone())
            .map_err(|e| e.to_string())?;
        let mut population = vec![header.seed_prompt.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        for record in records {
            if let (IterationStatus::Ok, Some(child), Some(scores)) =
                (record.status, &record.child, &record.child_scores)
            {
                frontier
                    .update(child.clone(), scores.clone())
                    .map_err(|e| format!("iteration {}: {e}", record.iteration))?;
                population = with_child(&frontier, child);
            }
            if frontier_entries(&frontier) != record.frontier_after {
                return Err(format!(
                    "iteration {}: replayed frontier differs from frontier_after",
                    record.iteration
                ));
            }
            rng.set_word_pos(record.word_pos()?);
        }
        Ok(Self {
            config,
            seed: header.seed_prompt.clone(),
            seed_scores: header.seed_scores.clone(),
            population,
            frontier,
            completed_iterations: records.len() as u32,
            records: records.to_vec(),
            rng,
            cache: HashMap::new(),
        })
    }
}

fn frontier_entries(frontier: &Frontier) -> Vec<FrontierEntry> {
    frontier
        .members()
        .iter()
        .map(|m| FrontierEntry {
            prompt_id: m.prompt.id.clone(),
            by_task: m.scores.by_task(),
        })
        .collect()
}

fn with_child(frontier: &Frontier, child: &Prompt) -> Vec<Prompt> {
    let mut population: Vec<Prompt> = frontier.members().iter().map(|m| m.prompt.clone()).collect();
    if !frontier.contains(&child.id) {
        population.push(child.clone());
    }
    population
}

/// Result of a finished (or stopped) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: RunState,
    pub log_path: PathBuf,
    /// Best frontier member by scalarized score, ties to the earliest born.
    pub final_prompt: Prompt,
    /// The seed prompt the run started from.
    pub baseline_prompt: Prompt,
}

impl RunOutcome {
    pub fn frontier(&self) -> &Frontier {
        &self.state.frontier
    }
}

/// Everything an iteration needs besides the state.
pub struct Optimizer<'a> {
    pub pools: &'a Pools,
    pub backend: &'a dyn Backend,
    pub prover: &'a ProverConfig,
    pub settings: EvaluationSettings,
    pub templates: MetaTemplates,
    pub budget: CritiqueBudget,
}

impl<'a> Optimizer<'a> {
    pub fn new(pools: &'a Pools, backend: &'a dyn Backend, prover: &'a ProverConfig) -> Self {
        Self {
            pools,
            backend,
            prover,
            settings: EvaluationSettings::default(),
            templates: MetaTemplates::default(),
            budget: CritiqueBudget::default(),
        }
    }

    fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(self.backend, self.prover).with_settings(self.settings)
    }

    fn eval_set(&self, config: &OptimizationConfig) -> Result<Vec<&'a TaskInstance>, ParetoError> {
        config.resolve_eval_set(&self.pools.algebra, &self.pools.gpqa)
    }

    /// Outcomes of `prompt` on `instances`, in order, reusing cached
    /// outcomes for the same prompt text. Backend errors are not cached.
    fn outcomes(
        &self,
        cache: &mut HashMap<(String, String), EvaluationOutcome>,
        prompt: &Prompt,
        instances: &[&TaskInstance],
    ) -> Vec<EvaluationOutcome> {
        let text_key = sha256_hex(&prompt.text);
        let missing: Vec<&TaskInstance> = instances
            .iter()
            .copied()
            .filter(|i| !cache.contains_key(&(text_key.clone(), i.id.clone())))
            .collect();
        let (_, fresh) = self.evaluator().evaluate_batch(prompt, &missing);
        let mut fresh: HashMap<String, EvaluationOutcome> =
            fresh.into_iter().map(|o| (o.instance_id.clone(), o)).collect();
        instances
            .iter()
            .map(|i| {
                let key = (text_key.clone(), i.id.clone());
                if let Some(hit) = cache.get(&key) {
                    return hit.clone();
                }
                let outcome = fresh.remove(&i.id).expect("evaluated above");
                let failed_backend = outcome
                    .failure_detail
                    .as_ref()
                    .is_some_and(|d| d.kind == FailureKind::BackendError);
                if !failed_backend {
                    cache.insert(key, outcome.clone());
                }
                outcome
            })
            .collect()
    }

    /// Validate the configuration, score the seed on the frontier
    /// evaluation set and seed the frontier with it.
    pub fn initialize(
        &self,
        config: &OptimizationConfig,
        seed: &Prompt,
    ) -> Result<RunState, OptimizerError> {
        config.validate(&self.pools.algebra, &self.pools.gpqa)?;
        seed.validate()?;
        self.prover.validate().map_err(OptimizerError::Prover)?;
        let mut cache = HashMap::new();
        let eval_set = self.eval_set(config)?;
        let outcomes = self.outcomes(&mut cache, seed, &eval_set);
        let seed_scores = score_vector(&seed.id, &outcomes);
        let mut frontier = Frontier::new(config.frontier_capacity, config.scalarization_weights);
        frontier.update(seed.clone(), seed_scores.clone())?;
        Ok(RunState {
            config: config.clone(),
            seed: seed.clone(),
            seed_scores,
            population: vec![seed.clone()],
            frontier,
            completed_iterations: 0,
            records: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            cache,
        })
    }

    /// Run one iteration and append its record to `state.records`.
    pub fn step(&self, state: &mut RunState) -> Result<RunRecord, OptimizerError> {
        if state.is_finished() {
            return Err(OptimizerError::Finished(state.completed_iterations));
        }
        let iteration = state.completed_iterations + 1;
        let best_before = state.frontier.best_scalarized();

        let parent = sample_candidate(&state.frontier, &state.population, &mut state.rng)?.clone();
        let batch = sample_batch(
            &self.pools.algebra,
            &self.pools.gpqa,
            state.config.sample_n,
            state.config.sample_m,
            &mut state.rng,
        )?;
        let outcomes = self.outcomes(&mut state.cache, &parent, &batch);
        let minibatch_scores = score_vector(&parent.id, &outcomes);

        let logs: Vec<FailureLog<'_>> = batch
            .iter()
            .zip(&outcomes)
            .map(|(instance, outcome)| FailureLog { instance, outcome })
            .collect();
        let failures: Vec<FailureLog<'_>> = logs.iter().copied().filter(|l| !l.outcome.passed).collect();

        let mut record = RunRecord {
            iteration,
            status: IterationStatus::Ok,
            error: None,
            sampled_prompt_id: parent.id.clone(),
            batch_instance_ids: batch.iter().map(|i| i.id.clone()).collect(),
            error_instance_ids: failures.iter().map(|l| l.instance.id.clone()).collect(),
            score_vector: minibatch_scores,
            critique: None,
            child: None,
            child_scores: None,
            child_admitted: false,
            frontier_after: Vec::new(),
            rng_state_digest: rng_digest(&state.rng),
            rng_word_pos: state.rng.get_word_pos().to_string(),
        };

        match self.critique_and_evolve(&parent, &logs, &failures, iteration) {
            Ok((critique_record, child)) => {
                let eval_set = self.eval_set(&state.config)?;
                let child_outcomes = self.outcomes(&mut state.cache, &child, &eval_set);
                let child_scores = score_vector(&child.id, &child_outcomes);
                let admission = state.frontier.update(child.clone(), child_scores.clone())?;
                state.population = with_child(&state.frontier, &child);
                record.critique = Some(critique_record);
                record.child = Some(child);
                record.child_scores = Some(child_scores);
                record.child_admitted = admission.admitted;
            }
            Err(message) => {
                record.status = IterationStatus::Failed;
                record.error = Some(message);
            }
        }
        record.frontier_after = frontier_entries(&state.frontier);

        debug_assert!(
            state.frontier.best_scalarized() >= best_before,
            "best scalarized score decreased"
        );
        debug_assert_eq!(record.validate(), Ok(()));
        state.completed_iterations = iteration;
        state.records.push(record.clone());
        Ok(record)
    }

    fn critique_and_evolve(
        &self,
        parent: &Prompt,
        logs: &[FailureLog<'_>],
        failures: &[FailureLog<'_>],
        iteration: u32,
    ) -> Result<(CritiqueRecord, Prompt), String> {
        let retry = self.settings.retry;
        let critique_record = if failures.is_empty() {
            // No errors: show the fastest solved items, ties by instance id.
            let mut successes = logs.to_vec();
            successes.sort_by(|a, b| {
                (a.outcome.latency_ms, &a.instance.id).cmp(&(b.outcome.latency_ms, &b.instance.id))
            });
            successes.truncate(self.budget.success_examples);
            retry.run(|| {
                critique_successes(self.backend, &self.templates, parent, &successes, &self.budget, iteration)
            })
        } else {
            retry.run(|| critique(self.backend, &self.templates, parent, failures, &self.budget, iteration))
        }
        .map_err(|e: BackendError| format!("critique failed: {e}"))?;

        let child_id = format!("p{iteration}");
        let child = retry
            .run(|| {
                match evolve(self.backend, &self.templates, parent, &critique_record, child_id.as_str(), iteration) {
                    Err(EvolveError::Backend(e)) => Err(e),
                    other => Ok(other),
                }
            })
            .map_err(EvolveError::from)
            .and_then(|r| r)
            .map_err(|e| format!("evolution failed: {e}"))?;
        Ok((critique_record, child))
    }

    /// Run from scratch, writing the log to `log_path`.
    pub fn run(
        &self,
        config: &OptimizationConfig,
        seed: &Prompt,
        log_path: &Path,
    ) -> Result<RunOutcome, OptimizerError> {
        self.run_until(config, seed, log_path, None)
    }

    /// Like [`Optimizer::run`] but stops after `stop_after` iterations when
    /// given, leaving a resumable log.
    pub fn run_until(
        &self,
        config: &OptimizationConfig,
        seed: &Prompt,
        log_path: &Path,
        stop_after: Option<u32>,
    ) -> Result<RunOutcome, OptimizerError> {
        let state = self.initialize(config, seed)?;
        let writer = RunLogWriter::create(log_path, &state.header(self.pools))?;
        self.drive(state, writer, stop_after)
    }

    /// Continue the run logged at `log_path`. A missing or empty log (or one
    /// whose header line is torn) starts a fresh run. A torn final record is
    /// dropped and that iteration is redone.
    pub fn resume(
        &self,
        config: &OptimizationConfig,
        seed: &Prompt,
        log_path: &Path,
    ) -> Result<RunOutcome, OptimizerError> {
        self.resume_until(config, seed, log_path, None)
    }

    pub fn resume_until(
        &self,
        config: &OptimizationConfig,
        seed: &Prompt,
        log_path: &Path,
        stop_after: Option<u32>,
    ) -> Result<RunOutcome, OptimizerError> {
        let parsed = match std::fs::metadata(log_path) {
            Ok(_) => read_log(log_path)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return self.run_until(config, seed, log_path, stop_after)
            }
            Err(source) => {
                return Err(OptimizerError::Io {
                    path: log_path.to_path_buf(),
                    source,
                })
            }
        };
        let Some(header) = parsed.header else {
            return self.run_until(config, seed, log_path, stop_after);
        };

        let supplied_digest = self.pools.digest();
        if header.pool_digest != supplied_digest {
            return Err(OptimizerError::PoolMismatch {
                logged: header.pool_digest,
                supplied: supplied_digest,
            });
        }
        let mut diff = config_diff(&header.config, config);
        if header.seed_prompt != *seed {
            diff.push("seed_prompt: differs from the logged seed".into());
        }
        if !diff.is_empty() {
            return Err(OptimizerError::ConfigMismatch(diff));
        }
        self.prover.validate().map_err(OptimizerError::Prover)?;

        let state = RunState::replay(&header, &parsed.records).map_err(|message| OptimizerError::Log {
            path: log_path.to_path_buf(),
            line: 0,
            message,
        })?;
        let writer = RunLogWriter::reopen_truncated(log_path, parsed.intact_len)?;
        self.drive(state, writer, stop_after)
    }

    fn drive(
        &self,
        mut state: RunState,
        mut writer: RunLogWriter,
        stop_after: Option<u32>,
    ) -> Result<RunOutcome, OptimizerError> {
        let limit = stop_after
            .unwrap_or(state.config.iterations)
            .min(state.config.iterations);
        while state.completed_iterations < limit {
            let record = self.step(&mut state)?;
            writer.append(&record)?;
            ::log::info!(
                "iteration {}: {:?}, frontier size {}, best {:.4}",
                record.iteration,
                record.status,
                state.frontier.len(),
                state.frontier.best_scalarized().unwrap_or(0.0)
            );
        }
        let final_prompt = state
            .frontier
            .best()
            .map(|m| m.prompt.clone())
            .unwrap_or_else(|| state.seed.clone());
        Ok(RunOutcome {
            baseline_prompt: state.seed.clone(),
            final_prompt,
            log_path: writer.path().to_path_buf(),
            state,
        })
    }
}

/// Field-level differences between two configurations, as
/// `path: logged=… supplied=…` lines.
pub fn config_diff(logged: &OptimizationConfig, supplied: &OptimizationConfig) -> Vec<String> {
    fn walk(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        use serde_json::Value;
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for key in keys {
                    let sub = if path.is_empty() {
                        key.clone()
                    } else {
                        format!("{path}.{key}")
                    };
                    walk(&sub, x.get(key).unwrap_or(&Value::Null), y.get(key).unwrap_or(&Value::Null), out);
                }
            }
            _ if a != b => out.push(format!("{path}: logged={a} supplied={b}")),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(
        "",
        &serde_json::to_value(logged).expect("config serializes"),
        &serde_json::to_value(supplied).expect("config serializes"),
        &mut out,
    );
    out
}

/// Digest identifying a (config, pools) pair, e.g. for output file names.
pub fn run_digest(config: &OptimizationConfig, pools: &Pools) -> String {
    let config_json = serde_json::to_string(config).expect("config serializes");
    parts_digest(&[&config_json, &pools.digest()])
}
