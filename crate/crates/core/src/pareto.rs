//! Domain types and the Pareto mathematics over them.
//!
//! Prompts are compared on two objectives, the algebra accuracy and the GPQA
//! accuracy, each computed over a fixed frontier evaluation set. The raw
//! per-instance outcomes are kept alongside so that failures can be logged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParetoError {
    #[error("score coverage mismatch between `{left}` and `{right}`: {detail}")]
    CoverageMismatch {
        left: String,
        right: String,
        detail: String,
    },
    #[error("prompt `{prompt_id}` has no scored {task} instances")]
    UnscoredTask { prompt_id: String, task: TaskKind },
    #[error("cannot sample a candidate: frontier and population are both empty")]
    EmptyPopulation,
    #[error("requested {requested} {task} instances but the pool holds {available}")]
    BatchTooLarge {
        task: TaskKind,
        requested: usize,
        available: usize,
    },
    #[error("invalid prompt `{id}`: {reason}")]
    InvalidPrompt { id: String, reason: String },
    #[error("invalid task instance `{id}`: {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("invalid optimization config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Algebra,
    Gpqa,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::Algebra, TaskKind::Gpqa];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Algebra => "algebra",
            TaskKind::Gpqa => "gpqa",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Seed,
    Evolved,
    Imported,
}

/// A candidate instruction text together with its lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub parent_id: Option<String>,
    pub iteration_born: u32,
    pub origin: Origin,
}

impl Prompt {
    pub fn seed(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ParetoError> {
        Self {
            id: id.into(),
            text: text.into(),
            parent_id: None,
            iteration_born: 0,
            origin: Origin::Seed,
        }
        .validated()
    }

    pub fn evolved(
        id: impl Into<String>,
        text: impl Into<String>,
        parent: &Prompt,
        iteration: u32,
    ) -> Result<Self, ParetoError> {
        Self {
            id: id.into(),
            text: text.into(),
            parent_id: Some(parent.id.clone()),
            iteration_born: iteration,
            origin: Origin::Evolved,
        }
        .validated()
    }

    /// A prompt brought in from outside a run, e.g. a hand-written baseline.
    /// Imported prompts have no parent; they are stamped with iteration 1
    /// because iteration 0 is reserved for the seed.
    pub fn imported(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ParetoError> {
        Self {
            id: id.into(),
            text: text.into(),
            parent_id: None,
            iteration_born: 1,
            origin: Origin::Imported,
        }
        .validated()
    }

    pub fn validate(&self) -> Result<(), ParetoError> {
        let fail = |reason: &str| {
            Err(ParetoError::InvalidPrompt {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.text.trim().is_empty() {
            return fail("text is empty");
        }
        let orphan = matches!(self.origin, Origin::Seed | Origin::Imported);
        if orphan != self.parent_id.is_none() {
            return fail("parent_id must be absent exactly for seed and imported prompts");
        }
        if (self.iteration_born == 0) != (self.origin == Origin::Seed) {
            return fail("iteration_born is 0 exactly for the seed prompt");
        }
        Ok(())
    }

    fn validated(self) -> Result<Self, ParetoError> {
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

/// One evaluation item: a formal theorem or a multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub task: TaskKind,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prover_header: Option<String>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), ParetoError> {
        let fail = |reason: String| {
            Err(ParetoError::InvalidInstance {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.is_empty() {
            return fail("id is empty".into());
        }
        match self.task {
            TaskKind::Gpqa => {
                let Some(choices) = &self.choices else {
                    return fail("gpqa instances require choices".into());
                };
                let Some(key) = &self.answer_key else {
                    return fail("gpqa instances require an answer_key".into());
                };
                if choices.is_empty() {
                    return fail("choices are empty".into());
                }
                let mut seen = BTreeSet::new();
                for choice in choices {
                    if choice.label.chars().count() != 1 {
                        return fail(format!(
                            "choice label `{}` is not a single character",
                            choice.label
                        ));
                    }
                    if !seen.insert(choice.label.as_str()) {
                        return fail(format!("duplicate choice label `{}`", choice.label));
                    }
                }
                if !seen.contains(key.as_str()) {
                    return fail(format!("answer_key `{key}` is not one of the choice labels"));
                }
            }
            TaskKind::Algebra => {
                if self.answer_key.is_some() || self.choices.is_some() {
                    return fail("algebra instances carry neither answer_key nor choices".into());
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<char> {
        self.choices
            .iter()
            .flatten()
            .filter_map(|c| c.label.chars().next())
            .collect()
    }
}

/// Per-task accuracy; `None` marks a task with no scored instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub algebra: Option<f64>,
    pub gpqa: Option<f64>,
}

impl TaskAccuracy {
    pub fn get(&self, task: TaskKind) -> Option<f64> {
        match task {
            TaskKind::Algebra => self.algebra,
            TaskKind::Gpqa => self.gpqa,
        }
    }

    /// Weighted sum of the two accuracies, or `None` if either is unscored.
    pub fn scalarize(&self, weights: ScalarizationWeights) -> Option<f64> {
        Some(weights.algebra * self.algebra? + weights.gpqa * self.gpqa?)
    }
}

/// Binary outcomes of one prompt, keyed by instance id and split by task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub prompt_id: String,
    pub algebra: BTreeMap<String, bool>,
    pub gpqa: BTreeMap<String, bool>,
}

impl ScoreVector {
    pub fn new(prompt_id: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            algebra: BTreeMap::new(),
            gpqa: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, instance_id: impl Into<String>, task: TaskKind, passed: bool) {
        self.task_mut(task).insert(instance_id.into(), passed);
    }

    pub fn task(&self, task: TaskKind) -> &BTreeMap<String, bool> {
        match task {
            TaskKind::Algebra => &self.algebra,
            TaskKind::Gpqa => &self.gpqa,
        }
    }

    fn task_mut(&mut self, task: TaskKind) -> &mut BTreeMap<String, bool> {
        match task {
            TaskKind::Algebra => &mut self.algebra,
            TaskKind::Gpqa => &mut self.gpqa,
        }
    }

    pub fn len(&self) -> usize {
        self.algebra.len() + self.gpqa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn passed(&self, task: TaskKind) -> usize {
        self.task(task).values().filter(|&&p| p).count()
    }

    pub fn get(&self, instance_id: &str) -> Option<bool> {
        self.algebra
            .get(instance_id)
            .or_else(|| self.gpqa.get(instance_id))
            .copied()
    }

    pub fn by_task(&self) -> TaskAccuracy {
        let accuracy = |task| {
            let scored = self.task(task);
            (!scored.is_empty()).then(|| self.passed(task) as f64 / scored.len() as f64)
        };
        TaskAccuracy {
            algebra: accuracy(TaskKind::Algebra),
            gpqa: accuracy(TaskKind::Gpqa),
        }
    }

    /// Instance ids with outcome 0, algebra first, each task in id order.
    pub fn failed_ids(&self) -> Vec<String> {
        TaskKind::ALL
            .iter()
            .flat_map(|&t| self.task(t).iter())
            .filter(|(_, &passed)| !passed)
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn check_coverage(&self, other: &ScoreVector) -> Result<(), ParetoError> {
        for task in TaskKind::ALL {
            let (mine, theirs) = (self.task(task), other.task(task));
            if !mine.keys().eq(theirs.keys()) {
                let only_left = mine.keys().find(|k| !theirs.contains_key(*k));
                let only_right = theirs.keys().find(|k| !mine.contains_key(*k));
                let detail = match (only_left, only_right) {
                    (Some(id), _) => format!("{task} instance `{id}` scored only on the left"),
                    (None, Some(id)) => format!("{task} instance `{id}` scored only on the right"),
                    (None, None) => unreachable!("key sequences differ"),
                };
                return Err(ParetoError::CoverageMismatch {
                    left: self.prompt_id.clone(),
                    right: other.prompt_id.clone(),
                    detail,
                });
            }
        }
        Ok(())
    }

    fn check_scored(&self) -> Result<(), ParetoError> {
        for task in TaskKind::ALL {
            if self.task(task).is_empty() {
                return Err(ParetoError::UnscoredTask {
                    prompt_id: self.prompt_id.clone(),
                    task,
                });
            }
        }
        Ok(())
    }
}

/// Strict Pareto domination over the two task accuracies.
///
/// Both vectors must cover the same instance ids on both tasks. Because the
/// coverage is identical, the accuracies share denominators and are
/// compared through exact pass counts.
pub fn dominates(a: &ScoreVector, b: &ScoreVector) -> Result<bool, ParetoError> {
    a.check_scored()?;
    b.check_scored()?;
    a.check_coverage(b)?;
    let mut strictly_better = false;
    for task in TaskKind::ALL {
        let (pa, pb) = (a.passed(task), b.passed(task));
        if pa < pb {
            return Ok(false);
        }
        strictly_better |= pa > pb;
    }
    Ok(strictly_better)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarizationWeights {
    pub algebra: f64,
    pub gpqa: f64,
}

impl Default for ScalarizationWeights {
    fn default() -> Self {
        Self {
            algebra: 0.5,
            gpqa: 0.5,
        }
    }
}

impl ScalarizationWeights {
    pub fn validate(&self) -> Result<(), ParetoError> {
        let ok = self.algebra >= 0.0
            && self.gpqa >= 0.0
            && ((self.algebra + self.gpqa) - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(ParetoError::InvalidConfig(format!(
                "scalarization weights must be non-negative and sum to 1, got ({}, {})",
                self.algebra, self.gpqa
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierMember {
    pub prompt: Prompt,
    pub scores: ScoreVector,
}

impl FrontierMember {
    pub fn scalarized(&self, weights: ScalarizationWeights) -> f64 {
        // Members are always scored on both tasks.
        self.scores.by_task().scalarize(weights).unwrap_or(f64::NEG_INFINITY)
    }
}

/// What happened to a candidate offered to the frontier.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Admission {
    pub admitted: bool,
    pub removed: Vec<String>,
}

/// The set of mutually non-dominated prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    members: Vec<FrontierMember>,
    capacity: Option<usize>,
    weights: ScalarizationWeights,
}

impl Frontier {
    pub fn new(capacity: Option<usize>, weights: ScalarizationWeights) -> Self {
        Self {
            members: Vec::new(),
            capacity,
            weights,
        }
    }

    pub fn unbounded() -> Self {
        Self::new(None, ScalarizationWeights::default())
    }

    pub fn members(&self) -> &[FrontierMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, prompt_id: &str) -> bool {
        self.members.iter().any(|m| m.prompt.id == prompt_id)
    }

    pub fn weights(&self) -> ScalarizationWeights {
        self.weights
    }

    /// Offer a scored prompt to the frontier.
    ///
    /// The candidate joins iff no member dominates it; members it dominates
    /// are dropped. On error the frontier is left untouched. Offering a
    /// prompt id that is already a member is a no-op.
    pub fn update(
        &mut self,
        prompt: Prompt,
        scores: ScoreVector,
    ) -> Result<Admission, ParetoError> {
        scores.check_scored()?;
        if self.contains(&prompt.id) {
            return Ok(Admission::default());
        }
        let mut dominated = Vec::new();
        for (idx, member) in self.members.iter().enumerate() {
            if dominates(&member.scores, &scores)? {
                return Ok(Admission::default());
            }
            if dominates(&scores, &member.scores)? {
                dominated.push(idx);
            }
        }
        let mut admission = Admission {
            admitted: true,
            removed: Vec::with_capacity(dominated.len()),
        };
        for idx in dominated.into_iter().rev() {
            admission.removed.push(self.members.remove(idx).prompt.id);
        }
        admission.removed.reverse();
        let offered = prompt.id.clone();
        self.members.push(FrontierMember { prompt, scores });

        if let Some(cap) = self.capacity {
            while self.members.len() > cap.max(1) {
                let worst = self.worst_index().expect("frontier is non-empty");
                let evicted = self.members.remove(worst).prompt.id;
                admission.admitted &= evicted != offered;
                admission.removed.push(evicted);
            }
        }
        Ok(admission)
    }

    /// Ordering used for "best" reporting: higher scalarized score, then
    /// lower iteration_born, then lexicographically smaller id.
    fn rank_cmp(&self, a: &FrontierMember, b: &FrontierMember) -> std::cmp::Ordering {
        b.scalarized(self.weights)
            .total_cmp(&a.scalarized(self.weights))
            .then(a.prompt.iteration_born.cmp(&b.prompt.iteration_born))
            .then_with(|| a.prompt.id.cmp(&b.prompt.id))
    }

    fn worst_index(&self) -> Option<usize> {
        (0..self.members.len()).max_by(|&i, &j| self.rank_cmp(&self.members[i], &self.members[j]))
    }

    pub fn best(&self) -> Option<&FrontierMember> {
        self.members.iter().min_by(|a, b| self.rank_cmp(a, b))
    }

    pub fn best_scalarized(&self) -> Option<f64> {
        self.best().map(|m| m.scalarized(self.weights))
    }
}

/// Pick the parent for the next iteration: uniformly from the frontier when
/// it is non-empty, otherwise uniformly from the population.
pub fn sample_candidate<'a, R: Rng + ?Sized>(
    frontier: &'a Frontier,
    population: &'a [Prompt],
    rng: &mut R,
) -> Result<&'a Prompt, ParetoError> {
    if !frontier.is_empty() {
        let idx = rng.random_range(0..frontier.len());
        return Ok(&frontier.members[idx].prompt);
    }
    if population.is_empty() {
        return Err(ParetoError::EmptyPopulation);
    }
    Ok(&population[rng.random_range(0..population.len())])
}

/// Draw `n` algebra and `m` gpqa instances without replacement. Algebra
/// indices are drawn first, then gpqa; the result keeps that order.
pub fn sample_batch<'a, R: Rng + ?Sized>(
    pool_algebra: &'a [TaskInstance],
    pool_gpqa: &'a [TaskInstance],
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<&'a TaskInstance>, ParetoError> {
    for (task, requested, available) in [
        (TaskKind::Algebra, n, pool_algebra.len()),
        (TaskKind::Gpqa, m, pool_gpqa.len()),
    ] {
        if requested > available {
            return Err(ParetoError::BatchTooLarge {
                task,
                requested,
                available,
            });
        }
    }
    let mut batch = Vec::with_capacity(n + m);
    batch.extend(index::sample(rng, pool_algebra.len(), n).iter().map(|i| &pool_algebra[i]));
    batch.extend(index::sample(rng, pool_gpqa.len(), m).iter().map(|i| &pool_gpqa[i]));
    Ok(batch)
}

/// Knobs of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    pub iterations: u32,
    pub sample_n: usize,
    pub sample_m: usize,
    pub rng_seed: u64,
    /// Instance ids every frontier candidate is scored on. Empty means the
    /// full algebra and gpqa pools.
    #[serde(default)]
    pub frontier_eval_set: Vec<String>,
    #[serde(default)]
    pub scalarization_weights: ScalarizationWeights,
    #[serde(default)]
    pub frontier_capacity: Option<usize>,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            sample_n: 4,
            sample_m: 4,
            rng_seed: 0,
            frontier_eval_set: Vec::new(),
            scalarization_weights: ScalarizationWeights::default(),
            frontier_capacity: None,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(
        &self,
        pool_algebra: &[TaskInstance],
        pool_gpqa: &[TaskInstance],
    ) -> Result<(), ParetoError> {
        let bad = |msg: String| Err(ParetoError::InvalidConfig(msg));
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if self.sample_n < 1 || self.sample_m < 1 {
            return bad("sample_n and sample_m must be at least 1".into());
        }
        if self.sample_n > pool_algebra.len() {
            return bad(format!(
                "sample_n = {} exceeds the algebra pool ({})",
                self.sample_n,
                pool_algebra.len()
            ));
        }
        if self.sample_m > pool_gpqa.len() {
            return bad(format!(
                "sample_m = {} exceeds the gpqa pool ({})",
                self.sample_m,
                pool_gpqa.len()
            ));
        }
        if self.frontier_capacity == Some(0) {
            return bad("frontier_capacity must be at least 1".into());
        }
        self.scalarization_weights.validate()?;
        let eval_set = self.resolve_eval_set(pool_algebra, pool_gpqa)?;
        for task in TaskKind::ALL {
            if !eval_set.iter().any(|i| i.task == task) {
                return bad(format!("frontier_eval_set holds no {task} instances"));
            }
        }
        Ok(())
    }

    /// The instances every frontier candidate is scored on, in pool order
    /// (algebra first).
    pub fn resolve_eval_set<'a>(
        &self,
        pool_algebra: &'a [TaskInstance],
        pool_gpqa: &'a [TaskInstance],
    ) -> Result<Vec<&'a TaskInstance>, ParetoError> {
        let all = pool_algebra.iter().chain(pool_gpqa);
        if self.frontier_eval_set.is_empty() {
            return Ok(all.collect());
        }
        let wanted: BTreeSet<&str> = self.frontier_eval_set.iter().map(String::as_str).collect();
        let chosen: Vec<_> = all.filter(|i| wanted.contains(i.id.as_str())).collect();
        if chosen.len() != wanted.len() {
            let known: BTreeSet<&str> = chosen.iter().map(|i| i.id.as_str()).collect();
            let missing = wanted.difference(&known).next().expect("sizes differ");
            return Err(ParetoError::InvalidConfig(format!(
                "frontier_eval_set names unknown instance `{missing}`"
            )));
        }
        Ok(chosen)
    }
}
