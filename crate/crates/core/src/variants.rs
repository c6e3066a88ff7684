//! Program variant generation and suite filtering.
//!
//! Put-guided generation hands the model both the task and the PUT and asks
//! for a repaired program; spec-only generation (the ablation baseline) asks
//! for a fresh solution from the task text alone. Every sample is one voter:
//! duplicates are kept.

use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{bindings, find_code_blocks, LlmError, LlmGateway, TemplateId};
use crate::model::{normalize_output, FilterStatus, ProgramVariant, SourceProgram, TaskBundle, VariantOrigin};
use crate::sandbox::{ExecError, Sandbox};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VariantError {
    #[error("variant count must be at least 1")]
    InvalidCount,
    #[error("no usable program in {samples} samples")]
    EmptyGeneration { samples: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    PutGuided,
    SpecOnly,
}

impl GenerationMode {
    fn template(self) -> TemplateId {
        match self {
            GenerationMode::PutGuided => TemplateId::VariantPutGuided,
            GenerationMode::SpecOnly => TemplateId::VariantSpecOnly,
        }
    }

    fn origin(self) -> VariantOrigin {
        match self {
            GenerationMode::PutGuided => VariantOrigin::PutGuided,
            GenerationMode::SpecOnly => VariantOrigin::SpecOnly,
        }
    }

    fn id_prefix(self) -> &'static str {
        match self {
            GenerationMode::PutGuided => "pg",
            GenerationMode::SpecOnly => "so",
        }
    }
}

fn no_bug_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bNO_BUG_FOUND\b|\bno bugs? (?:was |were |is )?(?:found|detected)\b").unwrap())
}

/// What one response contributes as a program source.
enum Extracted {
    Code(String),
    /// The model declared the PUT correct; the PUT itself votes.
    NoBug,
}

fn extract(mode: GenerationMode, text: &str) -> Extracted {
    if let Some(block) = find_code_blocks(text).into_iter().find(|b| !b.trim().is_empty()) {
        return Extracted::Code(block);
    }
    if mode == GenerationMode::PutGuided && no_bug_regex().is_match(text) {
        return Extracted::NoBug;
    }
    Extracted::Code(text.trim().to_owned())
}

/// Samples `k` responses and keeps those that yield a compiling program.
///
/// Variants come back in sample order with `filter_status = unfiltered`.
pub fn generate_variants(
    gateway: &LlmGateway,
    sandbox: &Sandbox,
    task: &TaskBundle,
    k: usize,
    mode: GenerationMode,
    temperature: f64,
) -> Result<Vec<ProgramVariant>, VariantError> {
    if k == 0 {
        return Err(VariantError::InvalidCount);
    }
    let language = task.put.language_tag.as_str();
    let b = match mode {
        GenerationMode::PutGuided => bindings([
            ("specification", task.specification.as_str()),
            ("put_source", task.put.source.as_str()),
            ("language", language),
        ]),
        GenerationMode::SpecOnly => bindings([("specification", task.specification.as_str()), ("language", language)]),
    };
    let base = gateway.templates().render(mode.template(), &b)?.for_task(&task.task_id);

    let samples: Vec<Result<Option<ProgramVariant>, VariantError>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let req = base.clone().with_sample(temperature, i as u32);
            let resp = gateway.complete(&req)?;
            let source = match extract(mode, &resp.text) {
                Extracted::NoBug => {
                    tracing::info!(event = "variant_no_op_repair", task = %task.task_id, sample = i);
                    task.put.source.clone()
                }
                Extracted::Code(code) if code.trim().is_empty() => {
                    tracing::info!(event = "variant_dropped", reason = "empty", task = %task.task_id, sample = i);
                    return Ok(None);
                }
                Extracted::Code(code) => code,
            };
            let program = SourceProgram {
                language_tag: task.put.language_tag.clone(),
                source,
            };
            match sandbox.compile(&program) {
                Ok(_) => {}
                Err(ExecError::CompileFailed { .. }) => {
                    tracing::info!(event = "variant_dropped", reason = "compile_failed", task = %task.task_id, sample = i);
                    return Ok(None);
                }
                Err(e) => return Err(e.into()),
            }
            Ok(Some(ProgramVariant {
                variant_id: format!("{}-{i:03}", mode.id_prefix()),
                source: program,
                origin: mode.origin(),
                llm_transcript_ref: resp.cache_key,
                filter_status: FilterStatus::Unfiltered,
            }))
        })
        .collect();

    let mut variants = Vec::with_capacity(k);
    for sample in samples {
        if let Some(v) = sample? {
            variants.push(v);
        }
    }
    if variants.is_empty() {
        return Err(VariantError::EmptyGeneration { samples: k });
    }
    Ok(variants)
}

/// True when `program` reproduces every expected output of the suite.
pub fn passes_suite(sandbox: &Sandbox, task: &TaskBundle, program: &SourceProgram) -> bool {
    let Ok(artifact) = sandbox.compile(program) else {
        return false;
    };
    task.suite.iter().all(|t| {
        let expected = normalize_output(&t.expected_output);
        sandbox.execute(&artifact, &t.input).output() == Some(expected.as_str())
    })
}

/// Keeps, in order, the variants that pass the whole existing suite and marks
/// them `passed_suite`.
pub fn filter_by_suite(sandbox: &Sandbox, task: &TaskBundle, variants: &[ProgramVariant]) -> Vec<ProgramVariant> {
    let verdicts: Vec<bool> = variants
        .par_iter()
        .map(|v| passes_suite(sandbox, task, &v.source))
        .collect();
    variants
        .iter()
        .zip(verdicts)
        .filter_map(|(v, ok)| {
            if !ok {
                tracing::info!(event = "variant_filtered_out", task = %task.task_id, variant = %v.variant_id);
                return None;
            }
            let mut v = v.clone();
            v.filter_status = FilterStatus::PassedSuite;
            Some(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use crate::model::SuiteTestCase;
    use crate::sandbox::SandboxOptions;

    fn task() -> TaskBundle {
        TaskBundle {
            task_id: "yes".into(),
            specification: "Print YES.".into(),
            put: SourceProgram::new("python3", "print('YES')").unwrap(),
            suite: vec![SuiteTestCase {
                input: String::new(),
                expected_output: "YES\n".into(),
            }],
            canonical: None,
            checker: None,
            difficulty: None,
        }
    }

    fn sandbox() -> Sandbox {
        Sandbox::new(SandboxOptions::default()).unwrap()
    }

    #[test]
    fn fixed_program_k3() {
        let gw = LlmGateway::mock(MockBackend::constant("```python\nprint('YES')\n```"));
        let vs = generate_variants(&gw, &sandbox(), &task(), 3, GenerationMode::PutGuided, 0.8).unwrap();
        assert_eq!(vs.len(), 3);
        assert!(vs.iter().all(|v| v.source.source == "print('YES')"));
        assert!(vs.iter().all(|v| v.filter_status == FilterStatus::Unfiltered));
        assert_eq!(vs[2].variant_id, "pg-002");
    }

    #[test]
    fn prose_only_is_empty_generation() {
        let gw = LlmGateway::mock(MockBackend::constant(
            "I think this program could be improved somewhat.",
        ));
        let err = generate_variants(&gw, &sandbox(), &task(), 2, GenerationMode::SpecOnly, 0.8).unwrap_err();
        assert_eq!(err, VariantError::EmptyGeneration { samples: 2 });
    }

    #[test]
    fn no_bug_answer_reuses_put() {
        let gw = LlmGateway::mock(MockBackend::constant("After review: NO_BUG_FOUND"));
        let vs = generate_variants(&gw, &sandbox(), &task(), 1, GenerationMode::PutGuided, 0.8).unwrap();
        assert_eq!(vs[0].source, task().put);
    }

    #[test]
    fn zero_k_rejected() {
        let gw = LlmGateway::mock(MockBackend::constant("x"));
        assert_eq!(
            generate_variants(&gw, &sandbox(), &task(), 0, GenerationMode::PutGuided, 0.8).unwrap_err(),
            VariantError::InvalidCount
        );
    }

    #[test]
    fn backend_errors_propagate() {
        let gw = LlmGateway::mock(MockBackend::from_fn(|_| {
            Err(LlmError::BackendUnavailable("down".into()))
        }));
        assert!(matches!(
            generate_variants(&gw, &sandbox(), &task(), 2, GenerationMode::PutGuided, 0.8),
            Err(VariantError::Llm(LlmError::BackendUnavailable(_)))
        ));
    }

    fn variant(id: &str, src: &str) -> ProgramVariant {
        ProgramVariant {
            variant_id: id.into(),
            source: SourceProgram::new("python3", src).unwrap(),
            origin: VariantOrigin::PutGuided,
            llm_transcript_ref: String::new(),
            filter_status: FilterStatus::Unfiltered,
        }
    }

    #[test]
    fn filtering_keeps_put_and_drops_silent_variant() {
        let sb = sandbox();
        let t = task();
        let vs = vec![
            variant("a", "print('YES')"),
            variant("b", "pass"),
            variant("c", "print('YES ')\n"),
        ];
        let kept = filter_by_suite(&sb, &t, &vs);
        let ids: Vec<_> = kept.iter().map(|v| v.variant_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(kept.iter().all(|v| v.filter_status == FilterStatus::PassedSuite));
        assert_eq!(filter_by_suite(&sb, &t, &kept), kept);
    }
}
