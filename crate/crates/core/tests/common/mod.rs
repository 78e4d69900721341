//! Shared fixtures: a rigged landscape where a prompt solves an instance iff
//! it contains that instance's trigger token, a critic that names one
//! missing token and an evolver that appends it.

#![allow(dead_code)]

use promptevo::evaluation::{EvaluationSettings, Pools, ProverConfig, RetryPolicy};
use promptevo::pareto::{Choice, Prompt, TaskInstance, TaskKind};
use promptevo::{OptimizationConfig, ScriptedBackend};

pub const PROVED: &str = "PROVED";

pub fn token(task: TaskKind, i: usize) -> String {
    match task {
        TaskKind::Algebra => format!("TOK_ALG{i}"),
        TaskKind::Gpqa => format!("TOK_GPQA{i}"),
    }
}

fn first_token(text: &str) -> Option<&str> {
    let start = text.find("TOK_")?;
    let rest = &text[start..];
    let end = rest
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(rest.len());
    Some(&rest[..end])
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some(&text[start..end])
}

pub fn algebra(i: usize) -> TaskInstance {
    TaskInstance {
        id: format!("alg{i}"),
        task: TaskKind::Algebra,
        statement: format!("theorem t{i} : True := by sorry -- needs {}", token(TaskKind::Algebra, i)),
        answer_key: None,
        choices: None,
        prover_header: Some("import Mathlib".into()),
    }
}

pub fn gpqa(i: usize) -> TaskInstance {
    TaskInstance {
        id: format!("gpqa{i}"),
        task: TaskKind::Gpqa,
        statement: format!("Question {i}, which needs {}?", token(TaskKind::Gpqa, i)),
        answer_key: Some("A".into()),
        choices: Some(
            ["A", "B", "C", "D"]
                .iter()
                .map(|l| Choice {
                    label: l.to_string(),
                    text: format!("option {l}"),
                })
                .collect(),
        ),
        prover_header: None,
    }
}

pub fn pools(n: usize) -> Pools {
    Pools::from_instances((0..n).map(algebra).chain((0..n).map(gpqa)))
}

/// Accepts a proof iff the source file has a line reading exactly `PROVED`.
pub fn stub_prover() -> ProverConfig {
    ProverConfig::new(["sh", "-c", "grep -qx PROVED \"$1\"", "sh", "{file}"]).with_timeout(10.0)
}

pub fn settings() -> EvaluationSettings {
    EvaluationSettings {
        parallelism: 4,
        retry: RetryPolicy::none(),
    }
}

/// Task model, critic and evolver of the rigged landscape in one backend.
pub fn rigged_backend() -> ScriptedBackend {
    ScriptedBackend::new("rigged").with_responder(|system, user| {
        if user.contains("<critique>") {
            let prompt = between(user, "<current_prompt>\n", "\n</current_prompt>")?;
            let critique = between(user, "<critique>\n", "\n</critique>")?;
            return Some(match first_token(critique) {
                Some(tok) => format!("{prompt} {tok}"),
                None => format!("{prompt} Be thorough."),
            });
        }
        if user.contains("<failures>") {
            let failures = between(user, "<failures>", "</failures>")?;
            return Some(match first_token(failures) {
                Some(tok) => format!("The prompt never mentions {tok}."),
                None => "No specific advice.".into(),
            });
        }
        if user.contains("<successes>") {
            return Some("Keep it as it is.".into());
        }
        let tok = first_token(user)?;
        let solved = system.split_whitespace().any(|w| w == tok);
        Some(if user.contains("theorem") {
            let line = if solved { PROVED } else { "FAILED" };
            format!("Here is the proof.\n```lean\n{line}\n```")
        } else if solved {
            "Reasoning done. Final answer: A".into()
        } else {
            "Reasoning done. Final answer: B".into()
        })
    })
}

pub fn seed_prompt() -> Prompt {
    Prompt::seed("p0", "Solve the problem.").unwrap()
}

pub fn config(iterations: u32, n: usize, m: usize, seed: u64) -> OptimizationConfig {
    OptimizationConfig {
        iterations,
        sample_n: n,
        sample_m: m,
        rng_seed: seed,
        ..OptimizationConfig::default()
    }
}

/// Log text for a run whose iteration `t` produced `children[t - 1]`. Scores
/// are synthetic; only the prompts matter to the analyses.
pub fn synthetic_log(seed_text: &str, children: &[&str]) -> String {
    use promptevo::optimizer::{FrontierEntry, IterationStatus, LogHeader, LOG_FORMAT_VERSION};
    use promptevo::RunRecord;

    let seed = Prompt::seed("p0", seed_text).unwrap();
    let mut scores = promptevo::ScoreVector::new("p0");
    scores.record("alg0", TaskKind::Algebra, true);
    scores.record("gpqa0", TaskKind::Gpqa, true);
    let header = LogHeader {
        format_version: LOG_FORMAT_VERSION,
        config: config(children.len() as u32, 1, 1, 0),
        pool_digest: "synthetic".into(),
        seed_prompt: seed.clone(),
        seed_scores: scores.clone(),
    };
    let mut text = serde_json::to_string(&header).unwrap() + "\n";
    let mut parent = seed;
    for (i, child_text) in children.iter().enumerate() {
        let t = i as u32 + 1;
        let child = Prompt::evolved(format!("p{t}"), *child_text, &parent, t).unwrap();
        let mut child_scores = scores.clone();
        child_scores.prompt_id = child.id.clone();
        let record = RunRecord {
            iteration: t,
            status: IterationStatus::Ok,
            error: None,
            sampled_prompt_id: parent.id.clone(),
            batch_instance_ids: vec!["alg0".into(), "gpqa0".into()],
            score_vector: scores.clone(),
            error_instance_ids: vec![],
            critique: Some(promptevo::backend::CritiqueRecord {
                prompt_id: parent.id.clone(),
                iteration: t,
                error_log_digest: String::new(),
                critique_text: "fine".into(),
            }),
            child: Some(child.clone()),
            child_scores: Some(child_scores),
            child_admitted: true,
            frontier_after: vec![FrontierEntry {
                prompt_id: child.id.clone(),
                by_task: scores.by_task(),
            }],
            rng_state_digest: String::new(),
            rng_word_pos: "0".into(),
        };
        text += &(serde_json::to_string(&record).unwrap() + "\n");
        parent = child;
    }
    text
}

/// Unit vectors on a circle in the (x, y) plane of `dim` dimensions; step
/// `i` turns by `steps[i - 1]` radians.
pub fn turning_trace(steps: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let mut angle = 0.0;
    let mut out = Vec::with_capacity(steps.len() + 1);
    let point = |a: f64| {
        let mut v = vec![0.0; dim];
        v[0] = a.cos();
        v[1] = a.sin();
        v
    };
    out.push(point(angle));
    for s in steps {
        angle += s;
        out.push(point(angle));
    }
    out
}
