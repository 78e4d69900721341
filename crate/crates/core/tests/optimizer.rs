mod common;

use std::fs;

use promptevo::optimizer::{read_log, IterationStatus, OptimizerError};
use promptevo::{Optimizer, ScriptedBackend};

use common::*;

fn optimizer<'a>(
    pools: &'a promptevo::evaluation::Pools,
    backend: &'a ScriptedBackend,
    prover: &'a promptevo::ProverConfig,
) -> Optimizer<'a> {
    let mut opt = Optimizer::new(pools, backend, prover);
    opt.settings = settings();
    opt
}

#[test]
fn log_has_header_plus_one_line_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(4), rigged_backend(), stub_prover());
    let log = dir.path().join("run.jsonl");
    let outcome = optimizer(&pools, &backend, &prover)
        .run(&config(5, 2, 2, 7), &seed_prompt(), &log)
        .unwrap();
    let text = fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 6);
    let parsed = read_log(&log).unwrap();
    assert_eq!(parsed.records.len(), 5);
    assert_eq!(parsed.torn_bytes, 0);
    assert_eq!(outcome.state.records, parsed.records);
    for r in &parsed.records {
        assert_eq!(r.status, IterationStatus::Ok);
        assert_eq!(r.batch_instance_ids.len(), 4);
        r.validate().unwrap();
    }
}

#[test]
fn children_dominating_their_parent_replace_it() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(4), rigged_backend(), stub_prover());
    let outcome = optimizer(&pools, &backend, &prover)
        .run(&config(3, 4, 4, 1), &seed_prompt(), &dir.path().join("r.jsonl"))
        .unwrap();
    // Every batch covers every instance, so each child fixes one failure.
    let frontier = outcome.frontier();
    assert_eq!(frontier.len(), 1);
    assert_eq!(frontier.members()[0].prompt.id, "p3");
    assert_eq!(frontier.best_scalarized(), Some(3.0 / 8.0));
    assert_eq!(outcome.final_prompt.id, "p3");
    assert_eq!(outcome.baseline_prompt.id, "p0");
    assert!(outcome.state.records.iter().all(|r| r.child_admitted));
}

#[test]
fn evaluations_are_cached_per_prompt_text() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(4), rigged_backend(), stub_prover());
    optimizer(&pools, &backend, &prover)
        .run(&config(2, 4, 4, 1), &seed_prompt(), &dir.path().join("r.jsonl"))
        .unwrap();
    // Seed: 8 evaluations. Each iteration: parent already cached on the
    // full pool, 1 critique, 1 evolution, 8 child evaluations.
    assert_eq!(backend.calls(), 8 + 2 * (2 + 8));
}

#[test]
fn failed_meta_calls_leave_a_marked_record_and_the_frontier_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let pools = pools(2);
    let prover = stub_prover();
    let inner = rigged_backend();
    // An evolver that replies with nothing usable.
    let backend = ScriptedBackend::new("broken").with_responder(move |system, user| {
        if user.contains("<critique>") {
            return Some("   ".into());
        }
        use promptevo::Backend;
        inner
            .chat(&promptevo::backend::ChatRequest {
                system,
                user,
                temperature: 0.0,
            })
            .ok()
            .map(|c| c.text)
    });
    let outcome = optimizer(&pools, &backend, &prover)
        .run(&config(2, 1, 1, 3), &seed_prompt(), &dir.path().join("r.jsonl"))
        .unwrap();
    assert_eq!(outcome.state.completed_iterations, 2);
    for r in &outcome.state.records {
        assert_eq!(r.status, IterationStatus::Failed);
        assert!(r.error.as_deref().unwrap().contains("evolution failed"), "{:?}", r.error);
        assert!(r.critique.is_none() && r.child.is_none());
        assert_eq!(r.frontier_after.len(), 1);
        assert_eq!(r.frontier_after[0].prompt_id, "p0");
    }
}

#[test]
fn seeded_runs_are_byte_identical_and_seeds_matter() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(6), rigged_backend(), stub_prover());
    let opt = optimizer(&pools, &backend, &prover);
    let paths: Vec<_> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    opt.run(&config(6, 2, 3, 11), &seed_prompt(), &paths[0]).unwrap();
    opt.run(&config(6, 2, 3, 11), &seed_prompt(), &paths[1]).unwrap();
    opt.run(&config(6, 2, 3, 12), &seed_prompt(), &paths[2]).unwrap();
    let a = fs::read(&paths[0]).unwrap();
    assert_eq!(a, fs::read(&paths[1]).unwrap());
    assert_ne!(a, fs::read(&paths[2]).unwrap());
}

#[test]
fn resume_continues_where_the_log_stops() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(6), rigged_backend(), stub_prover());
    let opt = optimizer(&pools, &backend, &prover);
    let cfg = config(6, 2, 2, 5);
    let full = dir.path().join("full");
    opt.run(&cfg, &seed_prompt(), &full).unwrap();
    let expected = fs::read(&full).unwrap();
    for k in [0, 1, 3, 5, 6] {
        let part = dir.path().join(format!("part{k}"));
        opt.run_until(&cfg, &seed_prompt(), &part, Some(k)).unwrap();
        assert_eq!(read_log(&part).unwrap().records.len(), k as usize);
        let resumed = opt.resume(&cfg, &seed_prompt(), &part).unwrap();
        assert_eq!(fs::read(&part).unwrap(), expected, "k = {k}");
        assert_eq!(resumed.state.completed_iterations, 6);
    }
}

#[test]
fn resume_of_missing_or_empty_log_starts_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(3), rigged_backend(), stub_prover());
    let opt = optimizer(&pools, &backend, &prover);
    let cfg = config(2, 1, 1, 5);
    let full = dir.path().join("full");
    opt.run(&cfg, &seed_prompt(), &full).unwrap();

    let missing = dir.path().join("missing");
    opt.resume(&cfg, &seed_prompt(), &missing).unwrap();
    assert_eq!(fs::read(&missing).unwrap(), fs::read(&full).unwrap());

    let empty = dir.path().join("empty");
    fs::write(&empty, "").unwrap();
    opt.resume(&cfg, &seed_prompt(), &empty).unwrap();
    assert_eq!(fs::read(&empty).unwrap(), fs::read(&full).unwrap());
}

#[test]
fn resume_refuses_a_different_configuration_or_pool() {
    let dir = tempfile::tempdir().unwrap();
    let (pools6, backend, prover) = (pools(6), rigged_backend(), stub_prover());
    let cfg = config(4, 2, 2, 5);
    let log = dir.path().join("log");
    optimizer(&pools6, &backend, &prover)
        .run_until(&cfg, &seed_prompt(), &log, Some(2))
        .unwrap();
    let before = fs::read(&log).unwrap();

    let mut other = cfg.clone();
    other.sample_n = 3;
    other.rng_seed = 6;
    let err = optimizer(&pools6, &backend, &prover)
        .resume(&other, &seed_prompt(), &log)
        .unwrap_err();
    match &err {
        OptimizerError::ConfigMismatch(diff) => {
            assert_eq!(diff.len(), 2, "{diff:?}");
            assert!(diff.iter().any(|d| d.starts_with("sample_n: logged=2 supplied=3")));
        }
        e => panic!("unexpected {e}"),
    }

    let pools5 = pools(5);
    let err = optimizer(&pools5, &backend, &prover)
        .resume(&cfg, &seed_prompt(), &log)
        .unwrap_err();
    assert!(matches!(err, OptimizerError::PoolMismatch { .. }), "{err}");
    assert_eq!(fs::read(&log).unwrap(), before);
}

#[test]
fn corrupt_interior_line_is_reported_with_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(3), rigged_backend(), stub_prover());
    let cfg = config(3, 1, 1, 5);
    let log = dir.path().join("log");
    optimizer(&pools, &backend, &prover).run(&cfg, &seed_prompt(), &log).unwrap();
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"iteration\": 2, garbage";
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    let err = optimizer(&pools, &backend, &prover)
        .resume(&cfg, &seed_prompt(), &log)
        .unwrap_err();
    assert!(err.to_string().contains(":3:"), "{err}");
}

#[test]
fn a_finished_run_resumes_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let (pools, backend, prover) = (pools(3), rigged_backend(), stub_prover());
    let cfg = config(2, 1, 1, 5);
    let log = dir.path().join("log");
    let opt = optimizer(&pools, &backend, &prover);
    let first = opt.run(&cfg, &seed_prompt(), &log).unwrap();
    let before = fs::read(&log).unwrap();
    let calls = backend.calls();
    let again = opt.resume(&cfg, &seed_prompt(), &log).unwrap();
    assert_eq!(fs::read(&log).unwrap(), before);
    assert_eq!(backend.calls(), calls);
    assert_eq!(again.state, first.state);
    assert_eq!(again.final_prompt, first.final_prompt);
}
