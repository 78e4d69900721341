//! Seeded inputs shared by the benchmarks.

use promptevo::{ScoreVector, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` score vectors over `per_task` instances of each task.
pub fn score_vectors(count: usize, per_task: usize, seed: u64) -> Vec<ScoreVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|c| {
            let mut v = ScoreVector::new(format!("c{c}"));
            for i in 0..per_task {
                v.record(format!("a{i}"), TaskKind::Algebra, rng.random_bool(0.5));
                v.record(format!("g{i}"), TaskKind::Gpqa, rng.random_bool(0.5));
            }
            v
        })
        .collect()
}

/// A long reasoning trace that restates several options before answering.
pub fn completion(paragraphs: usize) -> String {
    let mut text = String::new();
    for p in 0..paragraphs {
        let label = ["A", "B", "C", "D"][p % 4];
        text += &format!("Consider option ({label}). It might be right, but the units disagree.\n");
    }
    text + "After checking everything, the final answer is (C)."
}

/// `rows` points near a rank-`rank` subspace of `dim` dimensions.
pub fn low_rank_points(rows: usize, dim: usize, rank: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis: Vec<Vec<f64>> = (0..rank)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (0..rows)
        .map(|_| {
            let coeffs: Vec<f64> = (0..rank).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..dim)
                .map(|j| {
                    let signal: f64 = coeffs.iter().zip(&basis).map(|(c, b)| c * b[j]).sum();
                    signal + 1e-3 * rng.random_range(-1.0..1.0)
                })
                .collect()
        })
        .collect()
}
