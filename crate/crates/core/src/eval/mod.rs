//! Ground-truth evaluation of generated test cases.
//!
//! Every `(input, oracle)` pair falls into exactly one category: `Tc` (right
//! oracle, PUT fails it), `Tr` (right oracle, PUT passes), `Tw` (wrong oracle)
//! or `Terr` (invalid input). Correctness of the oracle is judged against the
//! canonical program; validity against the task checker. Without a checker,
//! validity is unknown and the oracle comparison alone decides.

mod ablation;
mod config;
mod repetition;

use rayon::prelude::*;
use thiserror::Error;

pub use ablation::{ablation_matrix, AblationRow, Pattern, TaskEvaluation, TaskEvaluator, PATTERNS};
pub use config::{DtMode, IgMode, PgMode, RunConfig, DEFAULT_INPUT_POOL, DEFAULT_MAX_ROUNDS, DEFAULT_VARIANT_POOL};
pub use repetition::{
    aggregate_rounds, binomial, repetition_protocol, select_subsets, AggregateMetrics, AggregateReport, RoundReport,
    SubsetPlan,
};

use crate::diff::OutputMatrix;
use crate::inputs::check_validity;
use crate::model::{
    CandidateTestCase, Category, ElectionStrategy, EvalVerdict, GeneratedInput, MetricsReport, PassFail, TaskBundle,
    Validity,
};
use crate::sandbox::Sandbox;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("task `{0}` has no canonical program; evaluation needs ground truth")]
    CanonicalMissing(String),
    #[error("variant pool of {pool} is smaller than k = {k}")]
    PoolTooSmall { pool: usize, k: usize },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
}

/// Taxonomy decision for one test case given everything already executed.
///
/// `canonical_out` is `None` when the canonical program did not run cleanly on
/// the input; the expected output is then undefined and the case counts as
/// `Terr`.
pub fn classify_outcome(validity: Validity, canonical_out: Option<&str>, oracle: &str, put_out: &str) -> EvalVerdict {
    let pass_fail = if put_out == oracle {
        PassFail::Passed
    } else {
        PassFail::Failed
    };
    let (category, reason) = if validity == Validity::Invalid {
        (Category::Terr, "checker rejected the input".to_owned())
    } else {
        match canonical_out {
            None => (Category::Terr, "canonical program failed on the input".to_owned()),
            Some(expected) if expected != oracle => {
                (Category::Tw, "oracle differs from the canonical output".to_owned())
            }
            Some(_) if pass_fail == PassFail::Failed => {
                (Category::Tc, "PUT output differs from a correct oracle".to_owned())
            }
            Some(_) => (Category::Tr, "PUT output matches a correct oracle".to_owned()),
        }
    };
    EvalVerdict {
        category,
        pass_fail,
        reason,
    }
}

/// Classifies one candidate by running the checker and the canonical program.
pub fn classify(sandbox: &Sandbox, task: &TaskBundle, tc: &CandidateTestCase) -> Result<EvalVerdict, EvalError> {
    let canonical = task
        .canonical
        .as_ref()
        .ok_or_else(|| EvalError::CanonicalMissing(task.task_id.clone()))?;
    let validity = check_validity(sandbox, task, &tc.input).validity;
    let expected = sandbox.run_program(canonical, &tc.input.payload).normalized_output;
    Ok(classify_outcome(
        validity,
        expected.as_deref(),
        &tc.oracle,
        &tc.election.put_output,
    ))
}

/// Confusion counts. For a buggy PUT every passed case is a false negative;
/// for a correct PUT every passed case is a true negative and every failed
/// case a false alarm, whatever its category.
pub fn compute_metrics(verdicts: &[EvalVerdict], put_is_buggy: bool) -> MetricsReport {
    let passed = verdicts.iter().filter(|v| v.pass_fail == PassFail::Passed).count();
    if !put_is_buggy {
        let failed = verdicts.len() - passed;
        return MetricsReport::from_counts(0, failed, 0, passed);
    }
    let tp = verdicts.iter().filter(|v| v.is_true_positive()).count();
    let fp = verdicts.iter().filter(|v| v.is_false_positive()).count();
    MetricsReport::from_counts(tp, fp, passed, 0)
}

/// Canonical outputs and checker verdicts for every input of a pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub canonical: Vec<Option<String>>,
    pub validity: Vec<Validity>,
}

impl GroundTruth {
    pub fn build(sandbox: &Sandbox, task: &TaskBundle, inputs: &[GeneratedInput]) -> Result<Self, crate::Error> {
        let canonical = task
            .canonical
            .as_ref()
            .ok_or_else(|| EvalError::CanonicalMissing(task.task_id.clone()))?;
        let canonical = crate::diff::run_on_inputs(sandbox, canonical, inputs)?;
        let validity = inputs
            .par_iter()
            .map(|input| match input.validity {
                Validity::Unknown => check_validity(sandbox, task, input).validity,
                known => known,
            })
            .collect();
        Ok(Self { canonical, validity })
    }

    pub fn count(&self, validity: Validity) -> usize {
        self.validity.iter().filter(|v| **v == validity).count()
    }
}

/// One verdict per input whose PUT run succeeded.
///
/// Inputs that produce no election still yield a test case: the implied
/// oracle is the PUT's own output, which the PUT passes. This is what makes
/// recall count the inputs on which the tool stayed silent.
pub fn round_verdicts(
    matrix: &OutputMatrix,
    truth: &GroundTruth,
    subset: &[usize],
    strategy: ElectionStrategy,
) -> Vec<EvalVerdict> {
    (0..matrix.inputs.len())
        .filter_map(|i| {
            let put_out = matrix.put[i].as_deref()?;
            let election = matrix.elect_input(i, subset, strategy);
            let oracle = election.as_ref().map_or(put_out, |e| e.winner.as_str());
            Some(classify_outcome(
                truth.validity[i],
                truth.canonical[i].as_deref(),
                oracle,
                put_out,
            ))
        })
        .collect()
}
