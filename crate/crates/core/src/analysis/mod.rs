//! Post-hoc analysis of run logs: prompt length over iterations and the
//! drift of prompt embeddings.

mod pca;
mod plot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, DimensionGuard};
use crate::optimizer::ParsedLog;

pub use pca::{Pca, MAX_ITERATIONS, TOLERANCE};
pub use plot::{emit_drift, emit_projection, emit_trajectory};

use pca::{dot, norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} vectors, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("vector dimension {0} is too small for a 2-D projection")]
    DimensionTooSmall(usize),
    #[error("vectors have differing dimensions ({expected} vs {actual})")]
    RaggedDimensions { expected: usize, actual: usize },
    #[error("degenerate variance: principal component {component} carries no variance")]
    DegenerateVariance { component: usize },
    #[error("iterations and values differ in length or are not strictly increasing")]
    MalformedSeries,
    #[error("run log has no header")]
    EmptyLog,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// A scalar series over iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub label: String,
    pub iterations: Vec<u32>,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn new(label: impl Into<String>, iterations: Vec<u32>, values: Vec<f64>) -> Result<Self, AnalysisError> {
        if iterations.len() != values.len() || iterations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AnalysisError::MalformedSeries);
        }
        Ok(Self {
            label: label.into(),
            iterations,
            values,
        })
    }

    /// Last value over first value.
    pub fn ratio(&self) -> Option<f64> {
        match (self.values.first(), self.values.last()) {
            (Some(&first), Some(&last)) if first != 0.0 => Some(last / first),
            _ => None,
        }
    }
}

/// Every prompt of a run in birth order: the seed at iteration 0, then the
/// child of each iteration that produced one.
pub fn run_prompts(log: &ParsedLog) -> Result<Vec<(u32, &str)>, AnalysisError> {
    let header = log.header.as_ref().ok_or(AnalysisError::EmptyLog)?;
    let mut prompts = vec![(0, header.seed_prompt.text.as_str())];
    prompts.extend(
        log.records
            .iter()
            .filter_map(|r| r.child.as_ref().map(|c| (r.iteration, c.text.as_str()))),
    );
    Ok(prompts)
}

/// Character count of each prompt born during the run.
pub fn length_trajectory(log: &ParsedLog) -> Result<Trajectory, AnalysisError> {
    let (iterations, values) = run_prompts(log)?
        .into_iter()
        .map(|(t, text)| (t, text.chars().count() as f64))
        .unzip();
    Trajectory::new("length_chars", iterations, values)
}

/// Prompt embeddings over iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTrace {
    pub iterations: Vec<u32>,
    pub vectors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_2d: Option<Vec<(f64, f64)>>,
}

impl EmbeddingTrace {
    pub fn new(iterations: Vec<u32>, vectors: Vec<Vec<f64>>) -> Result<Self, AnalysisError> {
        if iterations.len() != vectors.len() || iterations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AnalysisError::MalformedSeries);
        }
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(AnalysisError::RaggedDimensions {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(Self {
            iterations,
            vectors,
            projection_2d: None,
        })
    }

    /// Consecutive iterations 0..n.
    pub fn sequential(vectors: Vec<Vec<f64>>) -> Result<Self, AnalysisError> {
        Self::new((0..vectors.len() as u32).collect(), vectors)
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let io = |message: String| AnalysisError::Io {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let raw: Self = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        let mut trace = Self::new(raw.iterations, raw.vectors)?;
        trace.projection_2d = raw.projection_2d;
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<(), AnalysisError> {
        let text = serde_json::to_string(self).expect("traces serialize");
        std::fs::write(path, text).map_err(|e| AnalysisError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Embed every prompt born during the run.
pub fn embedding_trace(log: &ParsedLog, backend: &dyn Backend) -> Result<EmbeddingTrace, AnalysisError> {
    let mut guard = DimensionGuard::default();
    let mut iterations = Vec::new();
    let mut vectors = Vec::new();
    for (t, text) in run_prompts(log)? {
        let v = backend.embed(text)?;
        guard.check(&v)?;
        iterations.push(t);
        vectors.push(v);
    }
    EmbeddingTrace::new(iterations, vectors)
}

/// Fit two principal components and attach each vector's coordinates.
pub fn pca_project(trace: &EmbeddingTrace) -> Result<(EmbeddingTrace, Pca), AnalysisError> {
    let pca = Pca::fit(&trace.vectors, 2)?;
    let projection = trace
        .vectors
        .iter()
        .map(|v| {
            let c = pca.project(v);
            (c[0], c[1])
        })
        .collect();
    let mut out = trace.clone();
    out.projection_2d = Some(projection);
    Ok((out, pca))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    cosine_similarity(a, b).map(|s| 1.0 - s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub iteration: u32,
    /// Cosine distance to the first usable vector.
    pub distance_to_start: f64,
    /// Cosine distance to the previous usable vector; absent for the first.
    pub step_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    /// Mean cosine similarity between consecutive displacement vectors, in
    /// [-1, 1]; absent when fewer than two non-zero displacements exist.
    pub consistency: Option<f64>,
    pub warnings: Vec<String>,
}

/// Drift of a trace. Zero-norm vectors are excluded with a warning.
pub fn drift_metrics(trace: &EmbeddingTrace) -> Result<DriftReport, AnalysisError> {
    let mut warnings = Vec::new();
    let usable: Vec<(u32, &Vec<f64>)> = trace
        .iterations
        .iter()
        .zip(&trace.vectors)
        .filter(|(t, v)| {
            let ok = norm(v) > 0.0;
            if !ok {
                warnings.push(format!("iteration {t}: zero-norm embedding excluded"));
            }
            ok
        })
        .map(|(t, v)| (*t, v))
        .collect();
    if usable.len() < 2 {
        return Err(AnalysisError::TooFewVectors {
            needed: 2,
            got: usable.len(),
        });
    }
    let start = usable[0].1;
    let rows = usable
        .iter()
        .enumerate()
        .map(|(i, (t, v))| DriftRow {
            iteration: *t,
            distance_to_start: cosine_distance(start, v).expect("non-zero"),
            step_distance: (i > 0).then(|| cosine_distance(usable[i - 1].1, v).expect("non-zero")),
        })
        .collect();

    let displacements: Vec<Vec<f64>> = usable
        .windows(2)
        .map(|w| w[1].1.iter().zip(w[0].1).map(|(b, a)| b - a).collect())
        .collect();
    let sims: Vec<f64> = displacements
        .windows(2)
        .filter_map(|w| cosine_similarity(&w[0], &w[1]))
        .collect();
    let consistency = (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64);
    Ok(DriftReport {
        rows,
        consistency,
        warnings,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub const DEFAULT_JUMP_THRESHOLD: f64 = 3.0;

/// The iteration at which the largest consecutive cosine step occurs, if
/// that step exceeds `median + threshold * MAD` of all steps. Steps equal
/// within 1e-12 resolve to the earliest.
pub fn detect_jump(trace: &EmbeddingTrace, threshold: f64) -> Option<u32> {
    if trace.vectors.len() < 5 {
        return None;
    }
    let steps: Vec<(u32, f64)> = trace
        .vectors
        .windows(2)
        .zip(&trace.iterations[1..])
        .filter_map(|(w, t)| cosine_distance(&w[0], &w[1]).map(|d| (*t, d)))
        .collect();
    if steps.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = steps.iter().map(|s| s.1).collect();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut deviations: Vec<f64> = sorted.iter().map(|d| (d - med).abs()).collect();
    deviations.sort_by(f64::total_cmp);
    let mad = median(&deviations);

    let max = sorted[sorted.len() - 1];
    let (t, d) = *steps.iter().find(|(_, d)| max - d <= 1e-12)?;
    (d > med + threshold * mad + 1e-12).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(angles: &[f64]) -> EmbeddingTrace {
        EmbeddingTrace::sequential(angles.iter().map(|a| vec![a.cos(), a.sin(), 0.0]).collect()).unwrap()
    }

    #[test]
    fn consistency_extremes() {
        let line: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + i as f64, 2.0 + 0.5 * i as f64]).collect();
        let report = drift_metrics(&EmbeddingTrace::sequential(line).unwrap()).unwrap();
        assert!((report.consistency.unwrap() - 1.0).abs() < 1e-9);

        let alternating: Vec<Vec<f64>> = (0..9)
            .map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let report = drift_metrics(&EmbeddingTrace::sequential(alternating).unwrap()).unwrap();
        assert!((report.consistency.unwrap() + 1.0).abs() < 1e-9);
        assert!((report.rows[1].step_distance.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_are_excluded() {
        let trace = EmbeddingTrace::sequential(vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let report = drift_metrics(&trace).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[1].iteration, 2);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn jumps() {
        let uniform: Vec<f64> = (0..20).map(|i| 0.05 * i as f64).collect();
        assert_eq!(detect_jump(&circle(&uniform), DEFAULT_JUMP_THRESHOLD), None);

        // Two equal large steps: the earlier one wins.
        let mut angles = vec![0.0];
        for i in 1..20 {
            let step = if i == 6 || i == 14 { 0.5 } else { 0.05 };
            angles.push(angles[i - 1] + step);
        }
        assert_eq!(detect_jump(&circle(&angles), DEFAULT_JUMP_THRESHOLD), Some(6));
        assert_eq!(detect_jump(&circle(&angles[..4]), DEFAULT_JUMP_THRESHOLD), None);
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new("x", vec![0, 0], vec![1.0, 2.0]).is_err());
        assert!(Trajectory::new("x", vec![0], vec![]).is_err());
        let t = Trajectory::new("x", vec![0, 3], vec![2.0, 4.0]).unwrap();
        assert_eq!(t.ratio(), Some(2.0));
    }
}
