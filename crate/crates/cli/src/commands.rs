use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bughunt_core::bundle_io::{load_task_bundle, save_run_artifacts, to_json_bytes, CorpusManifest};
use bughunt_core::eval::EvalError;
use bughunt_core::eval::{
    ablation_matrix, AblationRow, AggregateMetrics, RunConfig, TaskEvaluation, TaskEvaluator, PATTERNS,
};
use bughunt_core::llm::{HttpBackend, HttpConfig, LlmGateway, MockBackend, PromptTemplates, ResponseCache};
use bughunt_core::sandbox::{Sandbox, SandboxOptions};
use bughunt_core::{Engine, TaskBundle};
use serde::Serialize;

use crate::settings::{BackendChoice, Settings};
use crate::CliError;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

/// Pretty JSON with a trailing newline, the format of every report file.
pub fn report_json<T: Serialize>(value: &T) -> Vec<u8> {
    to_json_bytes(value)
}

fn init_jobs(settings: &Settings) {
    if let Some(jobs) = settings.jobs {
        // A second initialization (e.g. in-process tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

fn build_gateway(settings: &Settings) -> Result<LlmGateway, CliError> {
    let cache = settings.cache_dir.as_ref().map(ResponseCache::new);
    let gateway = match settings.backend {
        BackendChoice::Replay => {
            let cache = cache.ok_or_else(|| CliError::Config("the replay backend needs --cache-dir".into()))?;
            LlmGateway::replay(cache)
        }
        BackendChoice::Mock => {
            let script = settings
                .mock_script
                .as_ref()
                .ok_or_else(|| CliError::Config("the mock backend needs --mock-script".into()))?;
            let gw = LlmGateway::mock(MockBackend::from_script_file(script)?).recording(settings.record);
            match cache {
                Some(c) => gw.with_cache(c),
                None => gw,
            }
        }
        BackendChoice::Http => {
            let config = HttpConfig {
                api_key: HttpConfig::api_key_from_env(),
                ..HttpConfig::default()
            };
            let gw =
                LlmGateway::new(bughunt_core::llm::Backend::Http(HttpBackend::new(config)?)).recording(settings.record);
            match cache {
                Some(c) => gw.with_cache(c),
                None => gw,
            }
        }
    };
    Ok(match &settings.prompts {
        Some(dir) => gateway.with_templates(PromptTemplates::with_overrides(dir)?),
        None => gateway,
    })
}

fn build_sandbox() -> Result<Sandbox, CliError> {
    Sandbox::new(SandboxOptions::default()).map_err(|e| CliError::Core(e.into()))
}

/// Swaps in the canonical program as the program under test.
fn correct_put_task(task: TaskBundle) -> Result<TaskBundle, CliError> {
    let canonical = task
        .canonical
        .clone()
        .ok_or_else(|| CliError::Core(EvalError::CanonicalMissing(task.task_id.clone()).into()))?;
    Ok(TaskBundle { put: canonical, ..task })
}

fn load_task(dir: &Path, settings: &Settings) -> Result<TaskBundle, CliError> {
    let task = load_task_bundle(dir)?;
    if settings.correct_put {
        correct_put_task(task)
    } else {
        Ok(task)
    }
}

fn task_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn cmd_run(task_dir: &Path, settings: &Settings) -> Result<PathBuf, CliError> {
    init_jobs(settings);
    let task = load_task(task_dir, settings)?;
    let gateway = build_gateway(settings)?;
    let sandbox = build_sandbox()?;
    let engine = Engine::new(&gateway, &sandbox, settings.temperature);
    let record = engine.run(&task, &settings.run, !settings.correct_put)?;
    let report = save_run_artifacts(&record, &settings.out)?;

    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", record.task_id);
    let _ = writeln!(
        md,
        "{} variants, {} inputs, {} candidate test cases.\n",
        record.variants.len(),
        record.inputs.len(),
        record.testcases.len()
    );
    if let Some(m) = &record.metrics {
        let _ = writeln!(
            md,
            "TP {} / FP {} / FN {} / TN {}; precision {:.4}, recall {:.4}, F1 {:.4}\n",
            m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f1
        );
    }
    let failing: Vec<_> = record
        .testcases
        .iter()
        .enumerate()
        .filter(|(_, tc)| tc.oracle != tc.election.put_output)
        .collect();
    let _ = writeln!(md, "## Failing test cases ({})\n", failing.len());
    for (i, tc) in failing {
        let verdict = record
            .verdicts
            .get(i)
            .map(|v| format!(" [{}]", v.category))
            .unwrap_or_default();
        let _ = writeln!(
            md,
            "- `{}`{}: input `{}`, expected `{}`, PUT printed `{}`",
            tc.input.input_id,
            verdict,
            tc.input.payload.trim(),
            tc.oracle,
            tc.election.put_output
        );
    }
    write_file(&settings.out.join("summary.md"), md.as_bytes())?;
    tracing::info!(event = "run_finished", task = %record.task_id, testcases = record.testcases.len());
    Ok(report)
}

#[derive(Debug, Serialize)]
struct Failure {
    task: String,
    exit_code: i32,
    error: String,
}

#[derive(Debug, Serialize)]
struct KMean {
    k: usize,
    metrics: AggregateMetrics,
}

#[derive(Debug, Serialize)]
struct TaskSummary {
    task_id: String,
    report: String,
    by_k: Vec<KMean>,
    unknown_validity_inputs: usize,
}

#[derive(Debug, Serialize)]
struct AggregateFile<'a> {
    config: &'a RunConfig,
    ks: &'a [usize],
    put_is_buggy: bool,
    tasks: Vec<TaskSummary>,
    failures: Vec<Failure>,
    mean: Vec<KMean>,
}

fn failure(dir: &Path, e: CliError) -> Failure {
    tracing::warn!(event = "task_failed", task = %task_label(dir), error = %e);
    Failure {
        task: task_label(dir),
        exit_code: e.exit_code(),
        error: e.to_string(),
    }
}

fn finish(total: usize, failures: &[Failure]) -> Result<(), CliError> {
    if total == 0 {
        return Err(CliError::Config("the corpus contains no tasks".into()));
    }
    if failures.len() == total {
        return Err(CliError::AllTasksFailed(total, failures[0].exit_code));
    }
    Ok(())
}

fn percent_table(title: &str, rows: impl IntoIterator<Item = (String, AggregateMetrics)>) -> String {
    let mut md = format!("# {title}\n\n| setting | Recall | Precision | F1 |\n|---|---:|---:|---:|\n");
    for (label, m) in rows {
        let _ = writeln!(
            md,
            "| {label} | {:.2} | {:.2} | {:.2} |",
            m.recall * 100.0,
            m.precision * 100.0,
            m.f1 * 100.0
        );
    }
    md
}

pub fn cmd_evaluate(corpus_dir: &Path, settings: &Settings) -> Result<PathBuf, CliError> {
    init_jobs(settings);
    let manifest = CorpusManifest::discover(corpus_dir)?;
    let gateway = build_gateway(settings)?;
    let sandbox = build_sandbox()?;
    let engine = Engine::new(&gateway, &sandbox, settings.temperature);

    let mut evaluations: Vec<TaskEvaluation> = Vec::new();
    let mut failures = Vec::new();
    for (dir, loaded) in manifest.load_all() {
        let outcome = loaded.map_err(CliError::from).and_then(|task| {
            let task = if settings.correct_put {
                correct_put_task(task)?
            } else {
                task
            };
            TaskEvaluator::new(&engine, &task, !settings.correct_put)
                .evaluate(&settings.run, &settings.ks)
                .map_err(CliError::from)
        });
        match outcome {
            Ok(eval) => evaluations.push(eval),
            Err(e) => failures.push(failure(&dir, e)),
        }
    }
    finish(manifest.tasks.len(), &failures)?;
    evaluations.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let mut tasks = Vec::new();
    for eval in &evaluations {
        let rel = format!("tasks/{}.json", eval.task_id);
        write_file(&settings.out.join(&rel), &report_json(eval))?;
        tasks.push(TaskSummary {
            task_id: eval.task_id.clone(),
            report: rel,
            by_k: eval
                .reports
                .iter()
                .map(|r| KMean {
                    k: r.k,
                    metrics: r.mean.clone(),
                })
                .collect(),
            unknown_validity_inputs: eval.unknown_validity_inputs,
        });
    }
    let mean: Vec<KMean> = settings
        .ks
        .iter()
        .enumerate()
        .map(|(i, &k)| KMean {
            k,
            metrics: AggregateMetrics::mean_of(
                &evaluations
                    .iter()
                    .map(|e| e.reports[i].mean.clone())
                    .collect::<Vec<_>>(),
            ),
        })
        .collect();
    let table = percent_table(
        "Evaluation",
        mean.iter().map(|m| (format!("k = {}", m.k), m.metrics.clone())),
    );
    let aggregate = AggregateFile {
        config: &settings.run,
        ks: &settings.ks,
        put_is_buggy: !settings.correct_put,
        tasks,
        failures,
        mean,
    };
    let path = settings.out.join("aggregate.json");
    write_file(&path, &report_json(&aggregate))?;
    write_file(&settings.out.join("aggregate.md"), table.as_bytes())?;
    Ok(path)
}

#[derive(Debug, Serialize)]
struct TaskRows {
    task_id: String,
    rows: Vec<AblationRow>,
}

#[derive(Debug, Serialize)]
struct AblationFile<'a> {
    config: &'a RunConfig,
    ks: &'a [usize],
    patterns: Vec<u8>,
    put_is_buggy: bool,
    tasks: Vec<TaskRows>,
    failures: Vec<Failure>,
    /// Unweighted mean over tasks, one row per pattern and k.
    rows: Vec<AblationRow>,
}

pub fn cmd_ablate(corpus_dir: &Path, settings: &Settings) -> Result<PathBuf, CliError> {
    init_jobs(settings);
    let patterns: Vec<_> = match &settings.patterns {
        Some(ids) => ids.iter().map(|&id| PATTERNS[id as usize - 1]).collect(),
        None => PATTERNS.to_vec(),
    };
    let manifest = CorpusManifest::discover(corpus_dir)?;
    let gateway = build_gateway(settings)?;
    let sandbox = build_sandbox()?;
    let engine = Engine::new(&gateway, &sandbox, settings.temperature);

    let mut per_task = Vec::new();
    let mut failures = Vec::new();
    for (dir, loaded) in manifest.load_all() {
        let outcome = loaded.map_err(CliError::from).and_then(|task| {
            let task = if settings.correct_put {
                correct_put_task(task)?
            } else {
                task
            };
            let mut evaluator = TaskEvaluator::new(&engine, &task, !settings.correct_put);
            let rows = ablation_matrix(&mut evaluator, &settings.run, &settings.ks, &patterns)?;
            Ok(TaskRows {
                task_id: task.task_id.clone(),
                rows,
            })
        });
        match outcome {
            Ok(rows) => per_task.push(rows),
            Err(e) => failures.push(failure(&dir, e)),
        }
    }
    finish(manifest.tasks.len(), &failures)?;
    per_task.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let mut grouped: BTreeMap<usize, Vec<AggregateMetrics>> = BTreeMap::new();
    for t in &per_task {
        for (i, row) in t.rows.iter().enumerate() {
            grouped.entry(i).or_default().push(row.metrics.clone());
        }
    }
    let rows: Vec<AblationRow> = per_task[0]
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| AblationRow {
            metrics: AggregateMetrics::mean_of(&grouped[&i]),
            ..r.clone()
        })
        .collect();
    let table = percent_table(
        "Ablation",
        rows.iter().map(|r| {
            (
                format!("{} (PG {}, IG {}, DT {}), k = {}", r.pattern, r.pg, r.ig, r.dt, r.k),
                r.metrics.clone(),
            )
        }),
    );
    let file = AblationFile {
        config: &settings.run,
        ks: &settings.ks,
        patterns: patterns.iter().map(|p| p.id).collect(),
        put_is_buggy: !settings.correct_put,
        tasks: per_task,
        failures,
        rows,
    };
    let path = settings.out.join("ablation.json");
    write_file(&path, &report_json(&file))?;
    write_file(&settings.out.join("ablation.md"), table.as_bytes())?;
    Ok(path)
}
