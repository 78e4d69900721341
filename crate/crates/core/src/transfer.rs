//! Cross-model transfer: a prompt-role × model × benchmark accuracy matrix
//! and its tabular report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendProfile};
use crate::digest::{json_digest, parts_digest};
use crate::evaluation::{EvaluationOutcome, EvaluationSettings, Evaluator, FailureKind, Pools, ProverConfig};
use crate::pareto::{Prompt, TaskInstance, TaskKind};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("no prompt supplied for role `{0}`")]
    MissingRole(PromptRole),
    #[error("both benchmark pools must be non-empty")]
    EmptyPools,
    #[error("no backend profiles supplied")]
    NoProfiles,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    HandSimple,
    HandCot,
    GepaBaseline,
    GepaFinal,
}

impl PromptRole {
    /// Report order.
    pub const ALL: [PromptRole; 4] = [
        PromptRole::HandSimple,
        PromptRole::HandCot,
        PromptRole::GepaBaseline,
        PromptRole::GepaFinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptRole::HandSimple => "hand_simple",
            PromptRole::HandCot => "hand_cot",
            PromptRole::GepaBaseline => "gepa_baseline",
            PromptRole::GepaFinal => "gepa_final",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PromptRole::HandSimple => "Hand-Crafted Simple",
            PromptRole::HandCot => "Hand-Crafted CoT",
            PromptRole::GepaBaseline => "GEPA Optimized Baseline",
            PromptRole::GepaFinal => "GEPA Optimized Final",
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accuracy of one prompt role on one benchmark under one model. Accuracy
/// is kept as a count so that `accuracy * n_instances` is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub model_name: String,
    pub prompt_role: PromptRole,
    pub benchmark: TaskKind,
    pub n_correct: usize,
    pub n_instances: usize,
    /// Evaluations that ended in a backend error; a cell with any is
    /// incomplete.
    #[serde(default)]
    pub n_backend_errors: usize,
    /// Digests of the underlying outcomes, in pool order.
    #[serde(default)]
    pub outcomes: Vec<String>,
}

impl MatrixCell {
    /// A cell from bare counts, as when transcribing published results.
    pub fn from_counts(
        model_name: impl Into<String>,
        prompt_role: PromptRole,
        benchmark: TaskKind,
        n_correct: usize,
        n_instances: usize,
    ) -> Self {
        assert!(n_correct <= n_instances, "more correct answers than instances");
        Self {
            model_name: model_name.into(),
            prompt_role,
            benchmark,
            n_correct,
            n_instances,
            n_backend_errors: 0,
            outcomes: Vec::new(),
        }
    }

    pub fn from_outcomes(
        model_name: impl Into<String>,
        prompt_role: PromptRole,
        benchmark: TaskKind,
        outcomes: &[EvaluationOutcome],
    ) -> Self {
        Self {
            model_name: model_name.into(),
            prompt_role,
            benchmark,
            n_correct: outcomes.iter().filter(|o| o.passed).count(),
            n_instances: outcomes.len(),
            n_backend_errors: outcomes
                .iter()
                .filter(|o| o.failure_detail.as_ref().is_some_and(|d| d.kind == FailureKind::BackendError))
                .count(),
            outcomes: outcomes.iter().map(json_digest).collect(),
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.n_instances == 0 {
            return 0.0;
        }
        self.n_correct as f64 / self.n_instances as f64
    }

    pub fn is_complete(&self) -> bool {
        self.n_backend_errors == 0 && self.n_instances > 0
    }

    /// Percentage with two decimals, rounded half up in exact arithmetic.
    pub fn percent(&self) -> String {
        format_percent(self.n_correct, self.n_instances)
    }
}

/// `correct / total` as a percentage with exactly two decimals, e.g.
/// `86.11%` for 31/36.
pub fn format_percent(correct: usize, total: usize) -> String {
    if total == 0 {
        return "0.00%".into();
    }
    let (c, n) = (correct as u128, total as u128);
    let hundredths = (20_000 * c + n) / (2 * n);
    format!("{}.{:02}%", hundredths / 100, hundredths % 100)
}

/// On-disk cache of single evaluations, one JSON file per
/// (profile, prompt text, instance) digest.
#[derive(Debug)]
pub struct EvalCache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl EvalCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, TransferError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| TransferError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, profile: &BackendProfile, prompt_text: &str, instance_id: &str) -> PathBuf {
        let key = parts_digest(&[&profile.content_digest(), prompt_text, instance_id]);
        self.dir.join(format!("{key}.json"))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn get(&self, path: &Path) -> Option<EvaluationOutcome> {
        let found = std::fs::read_to_string(path)
            .ok()
            .and_then(|text| serde_json::from_str(&text).ok());
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Write atomically: a reader sees either no file or the whole entry.
    fn put(&self, path: &Path, outcome: &EvaluationOutcome) -> Result<(), TransferError> {
        let io = |source| TransferError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(serde_json::to_string(outcome).expect("outcomes serialize").as_bytes())
            .map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

/// Cells plus the cache traffic that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub cells: Vec<MatrixCell>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

/// Evaluate every role's prompt on both pools under every backend. Backend
/// failures leave the affected cells incomplete; they are never cached, so a
/// rerun retries exactly those evaluations.
pub fn build_matrix(
    prompts: &BTreeMap<PromptRole, Prompt>,
    backends: &[&dyn Backend],
    pools: &Pools,
    prover: &ProverConfig,
    settings: EvaluationSettings,
    cache: Option<&EvalCache>,
) -> Result<Matrix, TransferError> {
    for role in PromptRole::ALL {
        if !prompts.contains_key(&role) {
            return Err(TransferError::MissingRole(role));
        }
    }
    if pools.algebra.is_empty() || pools.gpqa.is_empty() {
        return Err(TransferError::EmptyPools);
    }
    if backends.is_empty() {
        return Err(TransferError::NoProfiles);
    }
    let (hits0, misses0) = cache.map_or((0, 0), |c| (c.hits(), c.misses()));

    let mut cells = Vec::new();
    for backend in backends {
        let profile = backend.profile();
        let evaluator = Evaluator::new(*backend, prover).with_settings(settings);
        for role in PromptRole::ALL {
            let prompt = &prompts[&role];
            for task in TaskKind::ALL {
                let outcomes = cell_outcomes(&evaluator, profile, prompt, pools.pool(task), cache)?;
                cells.push(MatrixCell::from_outcomes(&profile.name, role, task, &outcomes));
            }
        }
    }
    let (hits1, misses1) = cache.map_or((0, 0), |c| (c.hits(), c.misses()));
    Ok(Matrix {
        cells,
        cache_hits: hits1 - hits0,
        cache_misses: misses1 - misses0,
    })
}

fn cell_outcomes(
    evaluator: &Evaluator<'_>,
    profile: &BackendProfile,
    prompt: &Prompt,
    pool: &[TaskInstance],
    cache: Option<&EvalCache>,
) -> Result<Vec<EvaluationOutcome>, TransferError> {
    let mut slots: Vec<Option<EvaluationOutcome>> = match cache {
        Some(c) => pool
            .iter()
            .map(|i| c.get(&c.entry_path(profile, &prompt.text, &i.id)))
            .collect(),
        None => vec![None; pool.len()],
    };
    let missing: Vec<&TaskInstance> = pool
        .iter()
        .zip(&slots)
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| i)
        .collect();
    let (_, fresh) = evaluator.evaluate_batch(prompt, &missing);
    let mut fresh = fresh.into_iter();
    for (instance, slot) in pool.iter().zip(slots.iter_mut()) {
        if slot.is_some() {
            continue;
        }
        let outcome = fresh.next().expect("one outcome per missing instance");
        let backend_failed = outcome
            .failure_detail
            .as_ref()
            .is_some_and(|d| d.kind == FailureKind::BackendError);
        if let (Some(c), false) = (cache, backend_failed) {
            c.put(&c.entry_path(profile, &prompt.text, &instance.id), &outcome)?;
        }
        *slot = Some(outcome);
    }
    Ok(slots.into_iter().map(|s| s.expect("filled")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    /// Aligned columns, best values wrapped in `**`.
    Text,
    /// Comma-separated with a header row and per-value best flags.
    Csv,
    /// A booktabs `tabular` environment.
    Latex,
}

/// A rendered report and its completeness warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub body: String,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn is_complete(&self) -> bool {
        self.warnings.is_empty()
    }
}

const MISSING: &str = "—";

struct Row<'a> {
    model: &'a str,
    role: PromptRole,
    values: [Option<(&'a MatrixCell, bool)>; 2],
}

fn ratio_cmp(a: &MatrixCell, b: &MatrixCell) -> std::cmp::Ordering {
    (a.n_correct as u128 * b.n_instances as u128).cmp(&(b.n_correct as u128 * a.n_instances as u128))
}

/// Group cells by model (in order of first appearance) and role, and mark
/// every maximal complete value of each (model, benchmark) column.
fn layout(cells: &[MatrixCell]) -> (Vec<Row<'_>>, Vec<String>) {
    let mut models: Vec<&str> = Vec::new();
    for cell in cells {
        if !models.contains(&cell.model_name.as_str()) {
            models.push(&cell.model_name);
        }
    }
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for model in models {
        let find = |role: PromptRole, task: TaskKind| {
            cells
                .iter()
                .find(|c| c.model_name == model && c.prompt_role == role && c.benchmark == task)
        };
        let mut best: [Option<&MatrixCell>; 2] = [None, None];
        for (slot, task) in TaskKind::ALL.into_iter().enumerate() {
            for role in PromptRole::ALL {
                match find(role, task) {
                    Some(c) if c.is_complete() => {
                        if best[slot].is_none_or(|b| ratio_cmp(c, b).is_gt()) {
                            best[slot] = Some(c);
                        }
                    }
                    Some(c) => warnings.push(format!(
                        "{model} / {} / {task}: {} of {} evaluations failed",
                        role.label(),
                        c.n_backend_errors,
                        c.n_instances
                    )),
                    None => warnings.push(format!("{model} / {} / {task}: no result", role.label())),
                }
            }
        }
        for role in PromptRole::ALL {
            let mut values = [None, None];
            for (slot, task) in TaskKind::ALL.into_iter().enumerate() {
                values[slot] = find(role, task).filter(|c| c.is_complete()).map(|c| {
                    let is_best = best[slot].is_some_and(|b| ratio_cmp(c, b).is_eq());
                    (c, is_best)
                });
            }
            rows.push(Row { model, role, values });
        }
    }
    (rows, warnings)
}

/// Render cells as a report. Incomplete cells show as [`MISSING`] and add a warning.
pub fn render_table(cells: &[MatrixCell], format: TableFormat) -> Report {
    let (rows, warnings) = layout(cells);
    let body = match format {
        TableFormat::Text => render_text(&rows),
        TableFormat::Csv => render_csv(&rows),
        TableFormat::Latex => render_latex(&rows),
    };
    Report { body, warnings }
}

fn render_text(rows: &[Row<'_>]) -> String {
    let mut grid: Vec<[String; 4]> = vec![[
        "Model".into(),
        "Method".into(),
        "Algebra".into(),
        "GPQA".into(),
    ]];
    let mut previous = None;
    for row in rows {
        let model = if previous == Some(row.model) { "" } else { row.model };
        previous = Some(row.model);
        let value = |v: Option<(&MatrixCell, bool)>| match v {
            Some((c, true)) => format!("**{}**", c.percent()),
            Some((c, false)) => c.percent(),
            None => MISSING.into(),
        };
        grid.push([
            model.into(),
            row.role.label().into(),
            value(row.values[0]),
            value(row.values[1]),
        ]);
    }
    let mut widths = [0; 4];
    for line in &grid {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for line in &grid {
        let mut text = String::new();
        for (i, cell) in line.iter().enumerate() {
            let pad = widths[i] - cell.chars().count();
            if i >= 2 {
                text.push_str(&" ".repeat(pad));
                text.push_str(cell);
            } else {
                text.push_str(cell);
                text.push_str(&" ".repeat(pad));
            }
            text.push_str("  ");
        }
        out.push_str(text.trim_end());
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(rows: &[Row<'_>]) -> String {
    let mut out = String::from("model,method,algebra,gpqa,algebra_best,gpqa_best\n");
    for row in rows {
        let value = |v: Option<(&MatrixCell, bool)>| v.map_or(String::new(), |(c, _)| c.percent());
        let best = |v: Option<(&MatrixCell, bool)>| v.map_or("", |(_, b)| if b { "1" } else { "0" });
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(row.model),
            csv_field(row.role.label()),
            value(row.values[0]),
            value(row.values[1]),
            best(row.values[0]),
            best(row.values[1]),
        );
    }
    out
}

fn render_latex(rows: &[Row<'_>]) -> String {
    let mut out = String::from(
        "  \\begin{tabular}{llll}\n    \\toprule\n    \\textbf{Model} & \\textbf{Method} & \\textbf{Algebra} & \\textbf{GPQA} \\\\\n",
    );
    let mut previous = None;
    for row in rows {
        if previous != Some(row.model) {
            out.push_str("    \\midrule\n");
            let _ = writeln!(out, "    \\multirow{{4}}{{*}}{{{}}} ", row.model);
            previous = Some(row.model);
        }
        let value = |v: Option<(&MatrixCell, bool)>| match v {
            Some((c, bold)) => {
                let pct = c.percent().replace('%', "\\%");
                if bold {
                    format!("\\textbf{{{pct}}}")
                } else {
                    pct
                }
            }
            None => MISSING.into(),
        };
        let _ = writeln!(
            out,
            "            & {} & {} & {} \\\\",
            row.role.label(),
            value(row.values[0]),
            value(row.values[1])
        );
    }
    out.push_str("    \\bottomrule\n  \\end{tabular}\n");
    out
}
