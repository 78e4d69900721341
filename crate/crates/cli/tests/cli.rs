use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

/// A self-contained project directory: two algebra and two gpqa items, a
/// stub prover and scripted models. The evolver always answers with the seed
/// written twice, which also proves the theorems.
struct Project {
    dir: tempfile::TempDir,
}

const SEED: &str = "Solve it.";
const EVOLVED: &str = "Solve it.Solve it.";

impl Project {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut data = String::new();
        for i in 0..2 {
            data += &json!({
                "id": format!("alg{i}"),
                "task": "algebra",
                "statement": format!("theorem t{i} : True := by sorry"),
                "prover_header": "import Mathlib"
            })
            .to_string();
            data.push('\n');
            data += &json!({
                "id": format!("gpqa{i}"),
                "task": "gpqa",
                "statement": format!("Question {i}?"),
                "answer_key": "A",
                "choices": [{"label": "A", "text": "yes"}, {"label": "B", "text": "no"}]
            })
            .to_string();
            data.push('\n');
        }
        std::fs::write(root.join("data.jsonl"), data).unwrap();
        std::fs::write(root.join("seed.txt"), format!("{SEED}\n")).unwrap();
        let script = json!({
            "rules": [
                {"user_contains": "<critique>", "response": EVOLVED},
                {"user_contains": "<failures>", "response": "Repeat yourself."},
                {"user_contains": "<successes>", "response": "Keep it."},
                {"system_contains": EVOLVED, "user_contains": "theorem", "response": "```\nPROVED\n```"},
                {"user_contains": "theorem", "response": "```\nsorry\n```"}
            ],
            "default": "Final answer: A"
        });
        std::fs::write(root.join("model.json"), script.to_string()).unwrap();
        // Answers nothing but theorems, so gpqa cells fail.
        let broken = json!({"rules": [{"user_contains": "theorem", "response": "```\nsorry\n```"}]});
        std::fs::write(root.join("broken.json"), broken.to_string()).unwrap();
        for (role, text) in [
            ("hand_simple", "Answer."),
            ("hand_cot", "Think step by step."),
            ("gepa_baseline", SEED),
            ("gepa_final", EVOLVED),
        ] {
            std::fs::write(root.join(format!("{role}.txt")), text).unwrap();
        }
        let config = json!({
            "optimization": {"iterations": 3, "sample_n": 1, "sample_m": 1, "rng_seed": 5},
            "seed_prompt": "seed.txt",
            "datasets": ["data.jsonl"],
            "prover": {"command": ["sh", "-c", "grep -qx PROVED \"$1\"", "sh", "{file}"], "timeout_s": 10},
            "profiles": [
                {"name": "model", "api": "scripted", "script": "model.json"},
                {"name": "broken", "api": "scripted", "script": "broken.json"}
            ],
            "optimizer_profile": "model",
            "evaluation": {"parallelism": 2, "retry": {"retries": 0, "base_delay_ms": 0}},
            "transfer": {
                "profiles": ["model"],
                "prompts": {
                    "hand_simple": "hand_simple.txt",
                    "hand_cot": "hand_cot.txt",
                    "gepa_baseline": "gepa_baseline.txt",
                    "gepa_final": "gepa_final.txt"
                },
                "cache_dir": "cache"
            },
            "analysis": {"embedding_profile": "model"}
        });
        std::fs::write(root.join("config.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_promptevo"))
            .current_dir(self.dir.path())
            .args(args)
            .env_remove("PROMPTEVO_LOG")
            .output()
            .unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn optimize_writes_log_and_prompts() {
    let p = Project::new();
    let out = p.run(&["optimize", "--config", "config.json", "--out", "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(read(&p.path("run/run_log.jsonl")).lines().count(), 4);
    assert_eq!(read(&p.path("run/final_prompt.txt")), EVOLVED);
    assert_eq!(read(&p.path("run/baseline_prompt.txt")), SEED);
    let text = stdout(&out);
    assert!(text.contains("3 iterations"), "{text}");
    assert!(text.contains("100.00%"), "{text}");

    // Same config and seed, same bytes.
    let again = p.run(&["optimize", "--config", "config.json", "--out", "run2"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(read(&p.path("run/run_log.jsonl")), read(&p.path("run2/run_log.jsonl")));
}

#[test]
fn missing_dataset_is_a_config_error() {
    let p = Project::new();
    std::fs::remove_file(p.path("data.jsonl")).unwrap();
    let out = p.run(&["optimize", "--config", "config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("datasets[0]"), "{}", stderr(&out));
}

#[test]
fn bad_overrides_are_usage_errors() {
    let p = Project::new();
    let out = p.run(&["optimize", "--config", "config.json", "--set", "optimization.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("optimization.nope"));
    let out = p.run(&["optimize", "--config", "config.json", "--set", "missing-equals"]);
    assert_eq!(out.status.code(), Some(2));
    let out = p.run(&["optimize"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_and_seed_flag_reach_the_run() {
    let p = Project::new();
    let out = p.run(&[
        "optimize",
        "--config",
        "config.json",
        "--set",
        "optimization.iterations=1",
        "--seed",
        "77",
        "--out",
        "run",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = read(&p.path("run/run_log.jsonl"));
    assert_eq!(log.lines().count(), 2);
    let header: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["rng_seed"], 77);
}

#[test]
fn resume_continues_an_interrupted_log() {
    let p = Project::new();
    assert_eq!(p.run(&["optimize", "--config", "config.json", "--out", "full"]).status.code(), Some(0));
    let full = read(&p.path("full/run_log.jsonl"));

    std::fs::create_dir(p.path("cut")).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    let partial = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
    std::fs::write(p.path("cut/run_log.jsonl"), partial).unwrap();
    let out = p.run(&["optimize", "--config", "config.json", "--out", "cut", "--resume"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(read(&p.path("cut/run_log.jsonl")), full);

    // A different configuration is refused.
    let out = p.run(&["optimize", "--config", "config.json", "--out", "cut", "--resume", "--seed", "6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rng_seed"), "{}", stderr(&out));
}

#[test]
fn evaluate_scores_a_prompt() {
    let p = Project::new();
    let out = p.run(&["evaluate", "--config", "config.json", "--prompt", "gepa_final.txt", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("model algebra: 2/2 (100.00%)"), "{text}");
    assert!(text.contains("model gpqa: 2/2 (100.00%)"), "{text}");
    assert_eq!(read(&p.path("ev/evaluation.jsonl")).lines().count(), 4);

    let out = p.run(&["evaluate", "--config", "config.json", "--out", "ev"]);
    assert!(stdout(&out).contains("model algebra: 0/2 (0.00%)"), "{}", stdout(&out));
}

#[test]
fn transfer_prints_one_block_per_profile() {
    let p = Project::new();
    let out = p.run(&["transfer", "--config", "config.json", "--out", "tr"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("model").count(), 1, "{text}");
    for file in ["table.txt", "table.csv", "table.tex", "cells.json"] {
        assert!(p.path("tr").join(file).is_file(), "{file}");
    }
    assert_eq!(read(&p.path("tr/table.txt")), text);

    let out = p.run(&[
        "transfer",
        "--config",
        "config.json",
        "--out",
        "tr2",
        "--set",
        r#"transfer.profiles=["model","broken"]"#,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("incomplete"), "{}", stderr(&out));
    assert!(stdout(&out).contains("broken"));

    let strict = p.run(&[
        "transfer",
        "--config",
        "config.json",
        "--out",
        "tr3",
        "--strict",
        "--set",
        r#"transfer.profiles=["broken"]"#,
    ]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn report_replays_the_golden_table() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let out = Command::new(env!("CARGO_BIN_EXE_promptevo"))
        .args(["report", "--format", "latex"])
        .arg(fixtures.join("transfer_cells.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), read(&fixtures.join("transfer_table.tex")));
}

#[test]
fn length_analysis_prints_the_ratio() {
    let p = Project::new();
    let opt = p.run(&["optimize", "--config", "config.json", "--set", "optimization.iterations=1", "--out", "run"]);
    assert_eq!(opt.status.code(), Some(0), "{}", stderr(&opt));
    let out = p.run(&["analyze", "length", "run/run_log.jsonl", "--out", "an"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("length ratio (final/seed): 2.00"), "{}", stdout(&out));
    assert!(p.path("an/length.csv").is_file() && p.path("an/length.svg").is_file());
}

#[test]
fn embedding_analysis_finds_an_injected_jump() {
    let p = Project::new();
    // Unit vectors turning by 0.05 rad per step, with one 0.5 rad step
    // landing on iteration 12.
    let mut angle: f64 = 0.0;
    let mut vectors = vec![];
    for t in 0..=20 {
        if t > 0 {
            angle += if t == 12 { 0.5 } else { 0.05 + 0.001 * (t % 3) as f64 };
        }
        vectors.push(vec![angle.cos(), angle.sin(), 0.0, 0.0]);
    }
    let trace = json!({"iterations": (0..=20).collect::<Vec<u32>>(), "vectors": vectors});
    std::fs::write(p.path("trace.json"), trace.to_string()).unwrap();
    let out = p.run(&["analyze", "embedding", "--trace", "trace.json", "--out", "an"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("jump: 12"), "{}", stdout(&out));
    for f in ["drift.csv", "drift.svg", "pca.csv", "pca.svg"] {
        assert!(p.path("an").join(f).is_file(), "{f}");
    }

    // Embedding a real log through the configured profile.
    p.run(&["optimize", "--config", "config.json", "--out", "run"]);
    let out = p.run(&["analyze", "embedding", "run/run_log.jsonl", "--config", "config.json", "--out", "an2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("jump: none"), "{}", stdout(&out));
    assert!(p.path("an2/embedding_trace.json").is_file());
}

#[test]
fn unknown_analysis_kind_is_a_usage_error() {
    let p = Project::new();
    let out = p.run(&["analyze", "sentiment", "log.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_every_override_key() {
    let out = Command::new(env!("CARGO_BIN_EXE_promptevo")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for (key, _) in promptevo::config::OVERRIDE_KEYS {
        assert!(text.contains(key), "--help is missing {key}");
    }
    for field in promptevo::config::PROFILE_OVERRIDE_FIELDS {
        assert!(text.contains(field), "--help is missing profile field {field}");
    }
}
