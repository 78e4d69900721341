//! Evolutionary multi-objective prompt optimization.
//!
//! The crate is organised around one loop: sample a prompt from the Pareto
//! frontier, score it on a minibatch of formal-proof and multiple-choice
//! tasks, ask a critic model to diagnose the failures, ask an evolver model to
//! rewrite the prompt, and offer the rewrite back to the frontier.
//!
//! - [`pareto`]: domain types, domination, frontier maintenance, sampling.
//! - [`evaluation`]: answer grading and prover-subprocess verification.
//! - [`backend`]: chat/embedding backends (HTTP, scripted, record/replay)
//!   and the critic/evolver meta-prompts.
//! - [`optimizer`]: the seeded, resumable optimization run and its log.
//! - [`transfer`]: the prompts x models x benchmarks accuracy matrix.
//! - [`analysis`]: prompt-length trajectories and embedding drift.
//! - [`config`]: the run configuration document.

pub mod analysis;
pub mod backend;
pub mod config;
pub mod digest;
pub mod evaluation;
pub mod optimizer;
pub mod pareto;
pub mod transfer;

pub use backend::{Backend, BackendError, BackendProfile, ScriptedBackend};
pub use evaluation::{EvaluationOutcome, FailureKind, ProverConfig};
pub use analysis::{EmbeddingTrace, Trajectory};
pub use config::RunConfig;
pub use optimizer::{Optimizer, RunOutcome, RunRecord, RunState};
pub use pareto::{
    dominates, sample_batch, sample_candidate, Frontier, OptimizationConfig, Origin, Prompt,
    ScoreVector, TaskAccuracy, TaskInstance, TaskKind,
};
pub use transfer::{MatrixCell, PromptRole};
