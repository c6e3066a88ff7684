//! Per-task evaluation and the component ablation grid.
//!
//! Pools and output matrices are memoized per generation mode, so every
//! pattern that shares a variant or input mode shares the exact same
//! programs and inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    repetition_protocol, AggregateMetrics, AggregateReport, DtMode, EvalError, GroundTruth, IgMode, PgMode, RunConfig,
};
use crate::diff::OutputMatrix;
use crate::model::{GeneratedInput, ProgramVariant, TaskBundle, Validity};
use crate::pipeline::Engine;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub id: u8,
    pub pg: PgMode,
    pub ig: IgMode,
    pub dt: DtMode,
}

const fn pattern(id: u8, pg: PgMode, ig: IgMode, dt: DtMode) -> Pattern {
    Pattern { id, pg, ig, dt }
}

/// The six component combinations, from all-baseline to the full method.
pub const PATTERNS: [Pattern; 6] = [
    pattern(1, PgMode::Basic, IgMode::Basic, DtMode::Basic),
    pattern(2, PgMode::Filtered, IgMode::Basic, DtMode::Basic),
    pattern(3, PgMode::Filtered, IgMode::Basic, DtMode::Ours),
    pattern(4, PgMode::Ours, IgMode::Basic, DtMode::Ours),
    pattern(5, PgMode::Filtered, IgMode::Ours, DtMode::Ours),
    pattern(6, PgMode::Ours, IgMode::Ours, DtMode::Ours),
];

/// Repetition reports for one task and one mode combination, one per `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task_id: String,
    pub put_is_buggy: bool,
    pub pg_mode: PgMode,
    pub ig_mode: IgMode,
    pub dt_mode: DtMode,
    pub seed: u64,
    pub variant_pool_size: usize,
    pub input_count: usize,
    pub invalid_inputs: usize,
    pub unknown_validity_inputs: usize,
    /// Inputs on which the PUT itself did not run cleanly.
    pub put_failed_inputs: usize,
    pub reports: Vec<AggregateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pattern: u8,
    pub pg: PgMode,
    pub ig: IgMode,
    pub dt: DtMode,
    pub k: usize,
    pub metrics: AggregateMetrics,
}

struct InputPool {
    inputs: Vec<GeneratedInput>,
    truth: GroundTruth,
}

pub struct TaskEvaluator<'e, 'a> {
    engine: &'e Engine<'a>,
    task: &'e TaskBundle,
    put_is_buggy: bool,
    variant_pools: BTreeMap<(PgMode, usize), Arc<Vec<ProgramVariant>>>,
    input_pools: BTreeMap<(IgMode, usize), Arc<InputPool>>,
    matrices: BTreeMap<(PgMode, usize, IgMode, usize), Arc<OutputMatrix>>,
}

impl<'e, 'a> TaskEvaluator<'e, 'a> {
    pub fn new(engine: &'e Engine<'a>, task: &'e TaskBundle, put_is_buggy: bool) -> Self {
        Self {
            engine,
            task,
            put_is_buggy,
            variant_pools: BTreeMap::new(),
            input_pools: BTreeMap::new(),
            matrices: BTreeMap::new(),
        }
    }

    fn variants(&mut self, pg: PgMode, samples: usize) -> Result<Arc<Vec<ProgramVariant>>> {
        if let Some(pool) = self.variant_pools.get(&(pg, samples)) {
            return Ok(pool.clone());
        }
        let pool = Arc::new(self.engine.variant_pool(self.task, pg, samples)?);
        self.variant_pools.insert((pg, samples), pool.clone());
        Ok(pool)
    }

    fn inputs(&mut self, ig: IgMode, size: usize) -> Result<Arc<InputPool>> {
        if let Some(pool) = self.input_pools.get(&(ig, size)) {
            return Ok(pool.clone());
        }
        let inputs = self.engine.input_pool(self.task, ig, size)?;
        let truth = GroundTruth::build(self.engine.sandbox, self.task, &inputs)?;
        let pool = Arc::new(InputPool { inputs, truth });
        self.input_pools.insert((ig, size), pool.clone());
        Ok(pool)
    }

    fn matrix(&mut self, config: &RunConfig) -> Result<(Arc<OutputMatrix>, Arc<InputPool>)> {
        let key = (config.pg_mode, config.variant_pool, config.ig_mode, config.input_pool);
        let inputs = self.inputs(config.ig_mode, config.input_pool)?;
        if let Some(m) = self.matrices.get(&key) {
            return Ok((m.clone(), inputs));
        }
        let variants = self.variants(config.pg_mode, config.variant_pool)?;
        let matrix = Arc::new(OutputMatrix::build(
            self.engine.sandbox,
            &self.task.put,
            &variants,
            &inputs.inputs,
        )?);
        self.matrices.insert(key, matrix.clone());
        Ok((matrix, inputs))
    }

    /// Runs the repetition protocol for every `k` in `ks` under the modes of
    /// `config` (its own `k` is ignored).
    pub fn evaluate(&mut self, config: &RunConfig, ks: &[usize]) -> Result<TaskEvaluation> {
        if self.task.canonical.is_none() {
            return Err(EvalError::CanonicalMissing(self.task.task_id.clone()).into());
        }
        for &k in ks {
            config.with_k(k).validate()?;
        }
        let (matrix, pool) = self.matrix(config)?;
        let mut reports = Vec::with_capacity(ks.len());
        for &k in ks {
            let report = repetition_protocol(&matrix, &pool.truth, &config.with_k(k), self.put_is_buggy)?;
            tracing::info!(
                event = "task_evaluated",
                task = %self.task.task_id,
                pg = %config.pg_mode,
                ig = %config.ig_mode,
                dt = %config.dt_mode,
                k,
                rounds = report.rounds.len(),
                precision = report.mean.precision,
                recall = report.mean.recall,
                f1 = report.mean.f1
            );
            reports.push(report);
        }
        Ok(TaskEvaluation {
            task_id: self.task.task_id.clone(),
            put_is_buggy: self.put_is_buggy,
            pg_mode: config.pg_mode,
            ig_mode: config.ig_mode,
            dt_mode: config.dt_mode,
            seed: config.seed,
            variant_pool_size: matrix.variant_ids.len(),
            input_count: pool.inputs.len(),
            invalid_inputs: pool.truth.count(Validity::Invalid),
            unknown_validity_inputs: pool.truth.count(Validity::Unknown),
            put_failed_inputs: matrix.put.iter().filter(|o| o.is_none()).count(),
            reports,
        })
    }
}

/// One row per `(pattern, k)`, patterns in the given order, `k` ascending
/// in the order given.
pub fn ablation_matrix(
    evaluator: &mut TaskEvaluator<'_, '_>,
    base: &RunConfig,
    ks: &[usize],
    patterns: &[Pattern],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(patterns.len() * ks.len());
    for p in patterns {
        let eval = evaluator.evaluate(&base.with_modes(p.pg, p.ig, p.dt), ks)?;
        rows.extend(eval.reports.into_iter().map(|r| AblationRow {
            pattern: p.id,
            pg: p.pg,
            ig: p.ig,
            dt: p.dt,
            k: r.k,
            metrics: r.mean,
        }));
    }
    Ok(rows)
}
