mod common;

use std::collections::BTreeMap;

use promptevo::transfer::{build_matrix, render_table, EvalCache, MatrixCell, PromptRole, TableFormat};
use promptevo::{Backend, Prompt, ScriptedBackend, TaskKind};

fn prompts() -> BTreeMap<PromptRole, Prompt> {
    PromptRole::ALL
        .into_iter()
        .map(|r| (r, Prompt::imported(r.as_str(), format!("You are {}.", r.label())).unwrap()))
        .collect()
}

fn always_right(name: &str) -> ScriptedBackend {
    ScriptedBackend::new(name).with_responder(|_, user| {
        Some(if user.contains("theorem") {
            format!("```\n{}\n```", common::PROVED)
        } else {
            "Final answer: A".into()
        })
    })
}

#[test]
fn one_cell_per_profile_role_and_benchmark() {
    let pools = common::pools(3);
    let backend = always_right("solver");
    let matrix = build_matrix(&prompts(), &[&backend], &pools, &common::stub_prover(), common::settings(), None).unwrap();
    assert_eq!(matrix.cells.len(), 8);
    for cell in &matrix.cells {
        assert_eq!(cell.accuracy(), 1.0);
        assert_eq!(cell.n_instances, 3);
        assert_eq!(cell.outcomes.len(), 3);
        assert!(cell.is_complete());
    }
    let two = always_right("second");
    let matrix = build_matrix(&prompts(), &[&backend, &two], &pools, &common::stub_prover(), common::settings(), None).unwrap();
    assert_eq!(matrix.cells.len(), 16);
}

#[test]
fn missing_roles_are_rejected() {
    let mut p = prompts();
    p.remove(&PromptRole::HandCot);
    let backend = always_right("solver");
    let err = build_matrix(&p, &[&backend], &common::pools(1), &common::stub_prover(), common::settings(), None)
        .unwrap_err();
    assert!(err.to_string().contains("hand_cot"), "{err}");
}

#[test]
fn rerun_only_fills_deleted_cache_entries() {
    let dir = tempfile::tempdir().unwrap();
    let cache = EvalCache::open(dir.path().join("cache")).unwrap();
    let pools = common::pools(3);
    let backend = always_right("solver");
    let prover = common::stub_prover();
    let first = build_matrix(&prompts(), &[&backend], &pools, &prover, common::settings(), Some(&cache)).unwrap();
    assert_eq!((first.cache_hits, first.cache_misses), (0, 24));
    assert_eq!(backend.calls(), 24);

    let second = build_matrix(&prompts(), &[&backend], &pools, &prover, common::settings(), Some(&cache)).unwrap();
    assert_eq!((second.cache_hits, second.cache_misses), (24, 0));
    assert_eq!(backend.calls(), 24);
    assert_eq!(first.cells, second.cells);

    // Drop the entries of one cell: GEPA Final on gpqa.
    let final_prompt = &prompts()[&PromptRole::GepaFinal];
    for inst in &pools.gpqa {
        std::fs::remove_file(cache.entry_path(backend.profile(), &final_prompt.text, &inst.id)).unwrap();
    }
    let third = build_matrix(&prompts(), &[&backend], &pools, &prover, common::settings(), Some(&cache)).unwrap();
    assert_eq!((third.cache_hits, third.cache_misses), (21, 3));
    assert_eq!(backend.calls(), 27);
    assert_eq!(third.cells, first.cells);
}

#[test]
fn backend_failures_make_cells_incomplete_and_are_not_cached() {
    let dir = tempfile::tempdir().unwrap();
    let cache = EvalCache::open(dir.path()).unwrap();
    let pools = common::pools(2);
    // Fails every gpqa item for the CoT prompt.
    let flaky = ScriptedBackend::new("flaky").with_responder(|system, user| {
        if system.contains("CoT") && !user.contains("theorem") {
            return None;
        }
        Some(if user.contains("theorem") {
            format!("```\n{}\n```", common::PROVED)
        } else {
            "Final answer: A".into()
        })
    });
    let m = build_matrix(&prompts(), &[&flaky], &pools, &common::stub_prover(), common::settings(), Some(&cache)).unwrap();
    let bad: Vec<&MatrixCell> = m.cells.iter().filter(|c| !c.is_complete()).collect();
    assert_eq!(bad.len(), 1);
    assert_eq!((bad[0].prompt_role, bad[0].benchmark), (PromptRole::HandCot, TaskKind::Gpqa));
    assert_eq!(m.cache_misses, 16);
    let again = build_matrix(&prompts(), &[&flaky], &pools, &common::stub_prover(), common::settings(), Some(&cache)).unwrap();
    assert_eq!(again.cache_misses, 2);

    let report = render_table(&m.cells, TableFormat::Text);
    assert_eq!(report.warnings.len(), 1);
    assert!(report.body.contains("—"));
}
