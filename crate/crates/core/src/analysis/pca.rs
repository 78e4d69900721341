//! Principal components by power iteration with deflation.

use super::AnalysisError;

pub const TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 1000;

/// Fitted principal components, ordered by descending explained variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm directions; the first nonzero loading of each is positive.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component (divisor n - 1).
    pub explained_variance: Vec<f64>,
    /// Iterations spent on each component.
    pub iterations: Vec<usize>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Remove the components along each (unit) direction in `basis`.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// `C v` for the sample covariance `C = Xᵀ X / (n - 1)` of centered rows.
fn cov_times(rows: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for row in rows {
        let c = dot(row, v);
        out.iter_mut().zip(row).for_each(|(o, x)| *o += c * x);
    }
    let scale = (rows.len() - 1) as f64;
    out.iter_mut().for_each(|o| *o /= scale);
    out
}

impl Pca {
    /// Fit the top `k` components of `vectors`.
    pub fn fit(vectors: &[Vec<f64>], k: usize) -> Result<Self, AnalysisError> {
        let n = vectors.len();
        if n < 3 {
            return Err(AnalysisError::TooFewVectors { needed: 3, got: n });
        }
        let dim = vectors[0].len();
        if dim < k.max(2) {
            return Err(AnalysisError::DimensionTooSmall(dim));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(AnalysisError::RaggedDimensions {
                expected: dim,
                actual: bad.len(),
            });
        }
        let mut mean = vec![0.0; dim];
        for v in vectors {
            mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let rows: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
            .collect();
        let total_variance: f64 = rows.iter().map(|r| dot(r, r)).sum::<f64>() / (n - 1) as f64;
        let floor = 1e-12 * total_variance.max(1.0);

        let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        let mut iterations = Vec::with_capacity(k);
        for index in 1..=k {
            // Start from the deflated data row of largest norm; it lies in
            // the remaining column space whenever that space is non-trivial.
            let mut v = rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    project_out(&mut r, &components);
                    r
                })
                .fold(vec![0.0; dim], |best, r| if norm(&r) > norm(&best) { r } else { best });
            if normalize(&mut v) <= floor.sqrt() {
                return Err(AnalysisError::DegenerateVariance { component: index });
            }
            let mut used = 0;
            for step in 1..=MAX_ITERATIONS {
                used = step;
                let mut next = cov_times(&rows, &v);
                project_out(&mut next, &components);
                if normalize(&mut next) == 0.0 {
                    break;
                }
                let change = next.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                v = next;
                if change < TOLERANCE {
                    break;
                }
            }
            let variance = dot(&v, &cov_times(&rows, &v));
            if variance <= floor {
                return Err(AnalysisError::DegenerateVariance { component: index });
            }
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            components.push(v);
            explained_variance.push(variance);
            iterations.push(used);
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
            iterations,
        })
    }

    /// Coordinates of `v` along each component.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.components.iter().map(|c| dot(&centered, c)).collect()
    }

    /// Map component coordinates back to the original space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, comp) in coords.iter().zip(&self.components) {
            out.iter_mut().zip(comp).for_each(|(o, x)| *o += c * x);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_data() {
        // Variance 4 along x, 1 along y.
        let pts = vec![
            vec![2.0, 0.0, 0.0],
            vec![-2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
        ];
        let pca = Pca::fit(&pts, 2).unwrap();
        assert!((pca.explained_variance[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!((pca.explained_variance[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pca.components[0][0] - 1.0).abs() < 1e-12);
        assert!((pca.components[1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert_eq!(
            Pca::fit(&same, 2).unwrap_err(),
            AnalysisError::DegenerateVariance { component: 1 }
        );
        let line = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert_eq!(
            Pca::fit(&line, 2).unwrap_err(),
            AnalysisError::DegenerateVariance { component: 2 }
        );
        assert!(matches!(
            Pca::fit(&line[..2], 2),
            Err(AnalysisError::TooFewVectors { .. })
        ));
    }
}
