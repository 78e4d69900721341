use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use promptevo::analysis::{
    detect_jump, drift_metrics, embedding_trace, emit_drift, emit_projection, emit_trajectory, length_trajectory,
    pca_project, EmbeddingTrace, DEFAULT_JUMP_THRESHOLD,
};
use promptevo::backend::{from_profile, MetaTemplates};
use promptevo::evaluation::{Evaluator, Pools};
use promptevo::optimizer::{read_log, OptimizerError};
use promptevo::transfer::{build_matrix, render_table, EvalCache, TableFormat};
use promptevo::{Backend, MatrixCell, Optimizer, Prompt, PromptRole, RunConfig, TaskKind};

use crate::{AnalysisKind, CommonArgs, Failure, Format};

pub const RUN_LOG: &str = "run_log.jsonl";
pub const FINAL_PROMPT: &str = "final_prompt.txt";
pub const BASELINE_PROMPT: &str = "baseline_prompt.txt";
pub const CELLS: &str = "cells.json";

type Result<T> = std::result::Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let path = args
        .config
        .as_deref()
        .ok_or_else(|| usage("this command needs --config PATH"))?;
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("optimization.rng_seed={seed}"));
    }
    let config = RunConfig::load(path, &overrides).map_err(usage)?;
    config.validate().map_err(usage)?;
    Ok(config)
}

fn load_pools(config: &RunConfig) -> Result<Pools> {
    let pools = Pools::load(&config.datasets).map_err(usage)?;
    if pools.is_empty() {
        return Err(usage("datasets: no instances found"));
    }
    Ok(pools)
}

fn read_text(path: &Path, field: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("{field}: {}: {e}", path.display())))
}

fn backend(config: &RunConfig, name: &str) -> Result<Arc<dyn Backend>> {
    let profile = config
        .profile(name)
        .ok_or_else(|| usage(format!("no profile named `{name}`")))?;
    from_profile(profile).map_err(|e| usage(format!("profile `{name}`: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn percent(value: Option<f64>) -> String {
    value.map_or_else(|| "-".into(), |v| format!("{:.2}%", 100.0 * v))
}

pub fn optimize(args: &CommonArgs, resume: bool) -> Result<()> {
    let config = load_config(args)?;
    let pools = load_pools(&config)?;
    let seed = Prompt::seed("p0", read_text(&config.seed_prompt, "seed_prompt")?.trim_end()).map_err(usage)?;
    let backend = backend(&config, &config.optimizer_profile)?;
    let mut optimizer = Optimizer::new(&pools, backend.as_ref(), &config.prover);
    optimizer.settings = config.evaluation;
    optimizer.templates = MetaTemplates::load(&config.templates).map_err(|e| usage(format!("templates: {e}")))?;
    optimizer.budget = config.critique_budget;

    create_dir(&args.out)?;
    let log_path = args.out.join(RUN_LOG);
    let outcome = if resume {
        optimizer.resume(&config.optimization, &seed, &log_path)
    } else {
        optimizer.run(&config.optimization, &seed, &log_path)
    }
    .map_err(|e| match e {
        OptimizerError::ConfigMismatch(_) | OptimizerError::PoolMismatch { .. } | OptimizerError::Prover(_) => {
            usage(e)
        }
        OptimizerError::Pareto(_) => usage(e),
        _ => runtime(e),
    })?;

    write(&args.out.join(FINAL_PROMPT), &outcome.final_prompt.text)?;
    write(&args.out.join(BASELINE_PROMPT), &outcome.baseline_prompt.text)?;

    let frontier = outcome.frontier();
    let weights = frontier.weights();
    println!(
        "{} iterations, frontier of {} prompt(s):",
        outcome.state.completed_iterations,
        frontier.len()
    );
    println!("  {:<8} {:>5} {:>9} {:>9} {:>9}", "prompt", "born", "algebra", "gpqa", "score");
    for m in frontier.members() {
        let acc = m.scores.by_task();
        println!(
            "  {:<8} {:>5} {:>9} {:>9} {:>9.4}",
            m.prompt.id,
            m.prompt.iteration_born,
            percent(acc.algebra),
            percent(acc.gpqa),
            m.scalarized(weights)
        );
    }
    println!("final prompt: {} ({})", outcome.final_prompt.id, args.out.join(FINAL_PROMPT).display());
    println!("run log: {}", outcome.log_path.display());
    Ok(())
}

pub fn evaluate(args: &CommonArgs, prompt: Option<&Path>, profile: Option<&str>) -> Result<()> {
    let config = load_config(args)?;
    let pools = load_pools(&config)?;
    let (path, field) = match prompt {
        Some(p) => (p.to_path_buf(), "--prompt"),
        None => (config.seed_prompt.clone(), "seed_prompt"),
    };
    let prompt = Prompt::imported("eval", read_text(&path, field)?.trim_end()).map_err(usage)?;
    let name = profile.unwrap_or(&config.optimizer_profile);
    let backend = backend(&config, name)?;
    let evaluator = Evaluator::new(backend.as_ref(), &config.prover).with_settings(config.evaluation);
    let instances: Vec<_> = pools.algebra.iter().chain(&pools.gpqa).collect();
    let (scores, outcomes) = evaluator.evaluate_batch(&prompt, &instances);

    create_dir(&args.out)?;
    let mut lines = String::new();
    for o in &outcomes {
        lines += &serde_json::to_string(o).map_err(runtime)?;
        lines.push('\n');
    }
    let path = args.out.join("evaluation.jsonl");
    write(&path, &lines)?;
    for task in [TaskKind::Algebra, TaskKind::Gpqa] {
        let total = scores.task(task).len();
        println!(
            "{name} {}: {}/{} ({})",
            task.as_str(),
            scores.passed(task),
            total,
            percent(scores.by_task().get(task))
        );
    }
    println!("outcomes: {}", path.display());
    Ok(())
}

fn print_report(cells: &[MatrixCell], format: TableFormat, strict: bool) -> Result<()> {
    let report = render_table(cells, format);
    print!("{}", report.body);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.is_complete() {
        eprintln!("warning: report is incomplete");
        if strict {
            return Err(runtime(format!("{} incomplete cell(s)", report.warnings.len())));
        }
    }
    Ok(())
}

pub fn transfer(args: &CommonArgs, strict: bool) -> Result<()> {
    let config = load_config(args)?;
    let pools = load_pools(&config)?;
    let mut prompts = BTreeMap::new();
    for role in PromptRole::ALL {
        let field = format!("transfer.prompts.{}", role.as_str());
        let path = config
            .transfer
            .prompts
            .get(&role)
            .ok_or_else(|| usage(format!("{field}: not set")))?;
        let text = read_text(path, &field)?;
        prompts.insert(role, Prompt::imported(role.as_str(), text.trim_end()).map_err(usage)?);
    }
    let names: Vec<&str> = if config.transfer.profiles.is_empty() {
        config.profiles.iter().map(|p| p.name.as_str()).collect()
    } else {
        config.transfer.profiles.iter().map(String::as_str).collect()
    };
    let backends = names
        .iter()
        .map(|n| backend(&config, n))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn Backend> = backends.iter().map(|b| b.as_ref()).collect();
    let cache = config
        .transfer
        .cache_dir
        .as_ref()
        .map(EvalCache::open)
        .transpose()
        .map_err(runtime)?;
    let matrix = build_matrix(&prompts, &refs, &pools, &config.prover, config.evaluation, cache.as_ref())
        .map_err(runtime)?;
    log::info!("cache: {} hits, {} misses", matrix.cache_hits, matrix.cache_misses);

    create_dir(&args.out)?;
    write(
        &args.out.join(CELLS),
        &serde_json::to_string_pretty(&matrix.cells).map_err(runtime)?,
    )?;
    for (format, file) in [
        (TableFormat::Text, "table.txt"),
        (TableFormat::Csv, "table.csv"),
        (TableFormat::Latex, "table.tex"),
    ] {
        write(&args.out.join(file), &render_table(&matrix.cells, format).body)?;
    }
    print_report(&matrix.cells, TableFormat::Text, strict)
}

pub fn report(cells: &Path, format: Format, strict: bool) -> Result<()> {
    let text = fs::read_to_string(cells).map_err(|e| usage(format!("{}: {e}", cells.display())))?;
    let cells: Vec<MatrixCell> =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", cells.display())))?;
    let format = match format {
        Format::Text => TableFormat::Text,
        Format::Csv => TableFormat::Csv,
        Format::Latex => TableFormat::Latex,
    };
    print_report(&cells, format, strict)
}

fn require_log(log: Option<&Path>) -> Result<PathBuf> {
    log.map(Path::to_path_buf)
        .ok_or_else(|| usage("a run log path is required"))
}

pub fn analyze(args: &CommonArgs, kind: AnalysisKind, log: Option<&Path>, trace: Option<&Path>) -> Result<()> {
    let config = args.config.as_ref().map(|_| load_config(args)).transpose()?;
    create_dir(&args.out)?;
    match kind {
        AnalysisKind::Length => {
            let parsed = read_log(&require_log(log)?).map_err(usage)?;
            let trajectory = length_trajectory(&parsed).map_err(runtime)?;
            let files = emit_trajectory(&trajectory, &args.out, "length").map_err(runtime)?;
            match trajectory.ratio() {
                Some(r) => println!("length ratio (final/seed): {r:.2}"),
                None => println!("length ratio (final/seed): undefined"),
            }
            print_files(&files);
        }
        AnalysisKind::Embedding => {
            let trace = match trace {
                Some(path) => EmbeddingTrace::load(path).map_err(usage)?,
                None => {
                    let parsed = read_log(&require_log(log)?).map_err(usage)?;
                    let config = config
                        .as_ref()
                        .ok_or_else(|| usage("embedding analysis of a log needs --config or --trace"))?;
                    let name = config
                        .analysis
                        .embedding_profile
                        .as_deref()
                        .ok_or_else(|| usage("analysis.embedding_profile: not set"))?;
                    let backend = backend(config, name)?;
                    let trace = embedding_trace(&parsed, backend.as_ref()).map_err(runtime)?;
                    trace.save(&args.out.join("embedding_trace.json")).map_err(runtime)?;
                    trace
                }
            };
            let threshold = config
                .as_ref()
                .map_or(DEFAULT_JUMP_THRESHOLD, |c| c.analysis.jump_threshold);
            let drift = drift_metrics(&trace).map_err(runtime)?;
            for w in &drift.warnings {
                eprintln!("warning: {w}");
            }
            let mut files = emit_drift(&drift, &args.out, "drift").map_err(runtime)?;
            match pca_project(&trace) {
                Ok((projected, pca)) => {
                    files.extend(emit_projection(&projected, &args.out, "pca").map_err(runtime)?);
                    println!(
                        "explained variance: {:.6}, {:.6}",
                        pca.explained_variance[0], pca.explained_variance[1]
                    );
                }
                Err(e) => eprintln!("warning: no projection: {e}"),
            }
            match drift.consistency {
                Some(c) => println!("direction consistency: {c:.4}"),
                None => println!("direction consistency: undefined"),
            }
            match detect_jump(&trace, threshold) {
                Some(t) => println!("jump: {t}"),
                None => println!("jump: none"),
            }
            print_files(&files);
        }
    }
    Ok(())
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}
