//! End-to-end drivers: pool construction and the single bug-hunting run.

use rayon::prelude::*;

use crate::bundle_io::RunRecord;
use crate::diff::{DiffError, OutputMatrix};
use crate::eval::{classify, compute_metrics, IgMode, PgMode, RunConfig};
use crate::inputs::{check_all, generate_direct_inputs, run_generator, synthesize_generator, InputError};
use crate::llm::LlmGateway;
use crate::model::{GeneratedInput, ProgramVariant, TaskBundle, Validity};
use crate::sandbox::Sandbox;
use crate::variants::{filter_by_suite, generate_variants, GenerationMode, VariantError};
use crate::Result;

pub struct Engine<'a> {
    pub gateway: &'a LlmGateway,
    pub sandbox: &'a Sandbox,
    pub temperature: f64,
}

impl<'a> Engine<'a> {
    pub fn new(gateway: &'a LlmGateway, sandbox: &'a Sandbox, temperature: f64) -> Self {
        Self {
            gateway,
            sandbox,
            temperature,
        }
    }

    /// Samples `samples` variants in the given mode and applies the suite
    /// filter where the mode calls for it. A pool may come back empty.
    pub fn variant_pool(&self, task: &TaskBundle, pg: PgMode, samples: usize) -> Result<Vec<ProgramVariant>> {
        let mode = match pg {
            PgMode::Basic | PgMode::Filtered => GenerationMode::SpecOnly,
            PgMode::Ours => GenerationMode::PutGuided,
        };
        let raw = match generate_variants(self.gateway, self.sandbox, task, samples, mode, self.temperature) {
            Ok(v) => v,
            Err(VariantError::EmptyGeneration { samples }) => {
                tracing::warn!(event = "variant_pool_empty", task = %task.task_id, samples);
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };
        let pool = match pg {
            PgMode::Basic => raw,
            PgMode::Filtered | PgMode::Ours => filter_by_suite(self.sandbox, task, &raw),
        };
        tracing::info!(event = "variant_pool", task = %task.task_id, mode = %pg, size = pool.len());
        Ok(pool)
    }

    /// Produces up to `size` inputs with checker validity filled in. Invalid
    /// inputs are kept; callers decide whether to drop them.
    pub fn input_pool(&self, task: &TaskBundle, ig: IgMode, size: usize) -> Result<Vec<GeneratedInput>> {
        let inputs = match ig {
            IgMode::Ours => {
                let script = synthesize_generator(self.gateway, self.sandbox, task, self.temperature)?;
                let seeds: Vec<u64> = (1..=size as u64).collect();
                run_generator(self.sandbox, &script, &seeds)?
            }
            IgMode::Basic => generate_direct_inputs(self.gateway, task, size, self.temperature)?,
        };
        let checked = check_all(self.sandbox, task, &inputs);
        tracing::info!(
            event = "input_pool",
            task = %task.task_id,
            mode = %ig,
            size = checked.len(),
            invalid = checked.iter().filter(|i| i.validity == Validity::Invalid).count()
        );
        Ok(checked)
    }

    /// One bug-hunting run: the first `k` surviving variants vote on every
    /// valid input. Verdicts and metrics are filled in only when the task has
    /// a canonical program.
    pub fn run(&self, task: &TaskBundle, config: &RunConfig, put_is_buggy: bool) -> Result<RunRecord> {
        config.validate()?;
        let mut variants = self.variant_pool(task, config.pg_mode, config.variant_pool)?;
        variants.truncate(config.k);
        if variants.is_empty() {
            return Err(DiffError::NoSurvivingVariants.into());
        }
        let inputs: Vec<GeneratedInput> = self
            .input_pool(task, config.ig_mode, config.input_pool)?
            .into_iter()
            .filter(|i| i.validity != Validity::Invalid)
            .collect();
        if inputs.is_empty() {
            return Err(InputError::EmptyGeneration {
                samples: config.input_pool,
            }
            .into());
        }
        let matrix = OutputMatrix::build(self.sandbox, &task.put, &variants, &inputs)?;
        let testcases = matrix.candidates(&matrix.all_variants(), config.dt_mode.strategy());

        let mut record = RunRecord::empty(task.task_id.clone(), config.clone());
        if task.canonical.is_some() {
            let verdicts = testcases
                .par_iter()
                .map(|tc| classify(self.sandbox, task, tc))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            record.metrics = Some(compute_metrics(&verdicts, put_is_buggy));
            record.verdicts = verdicts;
        }
        record.variants = variants;
        record.inputs = inputs;
        record.testcases = testcases;
        record.sort_by_id();
        Ok(record)
    }
}
