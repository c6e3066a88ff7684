//! Test input production.
//!
//! Generator mode asks the model for a seeded generator script and runs it once
//! per seed (`python3 gen.py <seed>` prints one input). Direct mode asks the
//! model for raw inputs, one per sample. Either way the task checker, when
//! present, decides validity.

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{bindings, find_code_blocks, LlmError, LlmGateway, TemplateId, GENERATOR_FEW_SHOT};
use crate::model::{ExecStatus, GeneratedInput, Provenance, SourceProgram, TaskBundle, Validity};
use crate::sandbox::{ExecError, Sandbox};

pub const GENERATOR_LANGUAGE: &str = "generator-script";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InputError {
    #[error("no usable input or generator in {samples} samples")]
    EmptyGeneration { samples: usize },
    #[error("generator failed on all {seeds} seeds")]
    GeneratorAlwaysFails { seeds: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Short content hash identifying a generator script in provenance records.
pub fn script_ref(script: &SourceProgram) -> String {
    let digest = Sha256::digest(script.source.as_bytes());
    format!("gen-{}", &hex::encode(digest)[..16])
}

/// Asks the model for a generator script (sample 0 of the generator prompt).
pub fn synthesize_generator(
    gateway: &LlmGateway,
    sandbox: &Sandbox,
    task: &TaskBundle,
    temperature: f64,
) -> Result<SourceProgram, InputError> {
    let req = gateway
        .templates()
        .render(
            TemplateId::InputGenerator,
            &bindings([
                ("specification", task.specification.as_str()),
                ("few_shot", GENERATOR_FEW_SHOT),
            ]),
        )?
        .for_task(&task.task_id)
        .with_sample(temperature, 0);
    let resp = gateway.complete(&req)?;
    let empty = InputError::EmptyGeneration { samples: 1 };
    let (code, fenced) = match find_code_blocks(&resp.text).into_iter().next() {
        Some(block) => (block, true),
        None => (resp.text.trim().to_owned(), false),
    };
    if code.trim().is_empty() {
        return Err(empty);
    }
    let script = SourceProgram {
        language_tag: GENERATOR_LANGUAGE.into(),
        source: code,
    };
    if !fenced {
        // Bare text only counts as a script if it at least parses.
        match sandbox.compile(&script) {
            Ok(_) => {}
            Err(ExecError::CompileFailed { .. }) => return Err(empty),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(script)
}

/// One input per seed that exits 0 within the limits, in seed order.
pub fn run_generator(
    sandbox: &Sandbox,
    script: &SourceProgram,
    seeds: &[u64],
) -> Result<Vec<GeneratedInput>, InputError> {
    let artifact = match sandbox.compile(script) {
        Ok(a) => a,
        Err(ExecError::CompileFailed { .. }) => return Err(InputError::GeneratorAlwaysFails { seeds: seeds.len() }),
        Err(e) => return Err(e.into()),
    };
    let reference = script_ref(script);
    let limits = sandbox.limits();
    let produced: Vec<Option<GeneratedInput>> = seeds
        .par_iter()
        .map(|&seed| {
            let outcome = sandbox.execute_with(&artifact, &[seed.to_string()], "", limits);
            if outcome.status != ExecStatus::Ok {
                tracing::info!(event = "generator_seed_failed", seed, status = ?outcome.status, detail = ?outcome.detail);
                return None;
            }
            Some(GeneratedInput {
                input_id: format!("gen-{seed:06}"),
                payload: outcome.raw_stdout,
                provenance: Provenance::Generator {
                    script_ref: reference.clone(),
                    seed,
                },
                validity: Validity::Unknown,
            })
        })
        .collect();
    let inputs: Vec<GeneratedInput> = produced.into_iter().flatten().collect();
    if inputs.is_empty() && !seeds.is_empty() {
        return Err(InputError::GeneratorAlwaysFails { seeds: seeds.len() });
    }
    Ok(inputs)
}

/// Up to `n` inputs written directly by the model, one per sample.
pub fn generate_direct_inputs(
    gateway: &LlmGateway,
    task: &TaskBundle,
    n: usize,
    temperature: f64,
) -> Result<Vec<GeneratedInput>, InputError> {
    let base = gateway
        .templates()
        .render(
            TemplateId::DirectInputs,
            &bindings([("specification", task.specification.as_str())]),
        )?
        .for_task(&task.task_id);
    let samples: Vec<Result<Option<GeneratedInput>, InputError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let resp = gateway.complete(&base.clone().with_sample(temperature, i as u32))?;
            let text = crate::llm::extract_code_block(&resp.text);
            if text.trim().is_empty() {
                return Ok(None);
            }
            Ok(Some(GeneratedInput {
                input_id: format!("llm-{i:06}"),
                payload: format!("{text}\n"),
                provenance: Provenance::DirectLlm {
                    transcript_ref: resp.cache_key,
                },
                validity: Validity::Unknown,
            }))
        })
        .collect();
    let mut inputs = Vec::with_capacity(n);
    for s in samples {
        if let Some(input) = s? {
            inputs.push(input);
        }
    }
    if inputs.is_empty() {
        return Err(InputError::EmptyGeneration { samples: n });
    }
    Ok(inputs)
}

/// Runs the task checker on the input: exit 0 is valid, any other exit code
/// invalid. Without a checker, or when the checker itself times out, crashes
/// by signal or fails to build, validity stays unknown.
pub fn check_validity(sandbox: &Sandbox, task: &TaskBundle, input: &GeneratedInput) -> GeneratedInput {
    let mut checked = input.clone();
    let Some(checker) = &task.checker else {
        checked.validity = Validity::Unknown;
        return checked;
    };
    let outcome = sandbox.run_program(checker, &input.payload);
    checked.validity = match (outcome.status, outcome.exit_code) {
        (ExecStatus::Ok, _) => Validity::Valid,
        (ExecStatus::Crash, Some(code)) if code != 0 => Validity::Invalid,
        _ => {
            tracing::warn!(
                event = "checker_crashed",
                task = %task.task_id,
                input = %input.input_id,
                status = ?outcome.status,
                detail = ?outcome.detail
            );
            Validity::Unknown
        }
    };
    checked
}

pub fn check_all(sandbox: &Sandbox, task: &TaskBundle, inputs: &[GeneratedInput]) -> Vec<GeneratedInput> {
    inputs
        .par_iter()
        .map(|input| check_validity(sandbox, task, input))
        .collect()
}
