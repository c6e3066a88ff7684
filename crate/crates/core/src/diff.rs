//! Oracle election by differential testing.
//!
//! Each input is run through the PUT and every program variant. Under the
//! diversity strategy only the outputs that *disagree* with the PUT vote, and
//! the most frequent of them becomes the oracle; when every variant agrees
//! with the PUT the input is discarded. The majority strategy is the classic
//! baseline where the PUT's own output also takes part in the vote.
//!
//! Ties go to the lexicographically smallest normalized output, so elections
//! do not depend on variant order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    CandidateTestCase, ElectionStrategy, ElectionTrace, ExecutionOutcome, GeneratedInput, ProgramVariant, SourceProgram,
};
use crate::sandbox::{ExecError, Sandbox};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("no program variants survived to differential testing")]
    NoSurvivingVariants,
    #[error("program under test is not runnable: {0}")]
    PutNotRunnable(#[from] ExecError),
}

fn multiset<'a>(outputs: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for out in outputs {
        *counts.entry(out.to_owned()).or_insert(0) += 1;
    }
    counts
}

/// Highest multiplicity; on ties the smallest key, since the map iterates in
/// ascending order and only a strictly larger count replaces the leader.
fn most_frequent(counts: &BTreeMap<String, usize>) -> Option<&str> {
    let mut best: Option<(&str, usize)> = None;
    for (out, &n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((out, n));
        }
    }
    best.map(|(out, _)| out)
}

fn trace(
    put_out: &str,
    variant_outs: &[(String, String)],
    winner: String,
    strategy: ElectionStrategy,
) -> ElectionTrace {
    ElectionTrace {
        put_output: put_out.to_owned(),
        variant_outputs: variant_outs.to_vec(),
        diff_multiset: multiset(variant_outs.iter().map(|(_, o)| o.as_str()).filter(|o| *o != put_out)),
        winner,
        strategy,
    }
}

/// Most frequent variant output among those differing from `put_out`, or
/// `None` when no variant disagrees with the PUT.
pub fn diversity_diff(put_out: &str, variant_outs: &[(String, String)]) -> Option<ElectionTrace> {
    let diff = multiset(variant_outs.iter().map(|(_, o)| o.as_str()).filter(|o| *o != put_out));
    let winner = most_frequent(&diff)?.to_owned();
    Some(trace(put_out, variant_outs, winner, ElectionStrategy::Diversity))
}

/// Most frequent output among the PUT and all variants, or `None` when that
/// output is the PUT's own (no failing test case can be derived).
pub fn majority_diff(put_out: &str, variant_outs: &[(String, String)]) -> Option<ElectionTrace> {
    if variant_outs.is_empty() {
        return None;
    }
    let votes = multiset(std::iter::once(put_out).chain(variant_outs.iter().map(|(_, o)| o.as_str())));
    let winner = most_frequent(&votes)?;
    if winner == put_out {
        return None;
    }
    let winner = winner.to_owned();
    Some(trace(put_out, variant_outs, winner, ElectionStrategy::Majority))
}

pub fn elect(strategy: ElectionStrategy, put_out: &str, variant_outs: &[(String, String)]) -> Option<ElectionTrace> {
    match strategy {
        ElectionStrategy::Diversity => diversity_diff(put_out, variant_outs),
        ElectionStrategy::Majority => majority_diff(put_out, variant_outs),
    }
}

/// Normalized outputs of the PUT and every variant on every input.
/// `None` marks a non-ok execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputMatrix {
    pub inputs: Vec<GeneratedInput>,
    pub variant_ids: Vec<String>,
    pub put: Vec<Option<String>>,
    /// `variants[v][i]` is variant `v` on input `i`.
    pub variants: Vec<Vec<Option<String>>>,
}

fn ok_output(outcome: ExecutionOutcome) -> Option<String> {
    outcome.normalized_output
}

/// Runs `program` on every input; compile failures yield all-`None`.
pub fn run_on_inputs(
    sandbox: &Sandbox,
    program: &SourceProgram,
    inputs: &[GeneratedInput],
) -> Result<Vec<Option<String>>, ExecError> {
    let artifact = sandbox.compile(program)?;
    Ok(inputs
        .par_iter()
        .map(|input| ok_output(sandbox.execute(&artifact, &input.payload)))
        .collect())
}

impl OutputMatrix {
    pub fn build(
        sandbox: &Sandbox,
        put: &SourceProgram,
        variants: &[ProgramVariant],
        inputs: &[GeneratedInput],
    ) -> Result<Self, DiffError> {
        let put_outputs = run_on_inputs(sandbox, put, inputs)?;
        let variant_outputs = variants
            .iter()
            .map(|v| match run_on_inputs(sandbox, &v.source, inputs) {
                Ok(outs) => outs,
                Err(e) => {
                    tracing::warn!(event = "variant_not_runnable", variant = %v.variant_id, error = %e);
                    vec![None; inputs.len()]
                }
            })
            .collect();
        Ok(Self {
            inputs: inputs.to_vec(),
            variant_ids: variants.iter().map(|v| v.variant_id.clone()).collect(),
            put: put_outputs,
            variants: variant_outputs,
        })
    }

    /// Election for input `i` using the variants at `subset` (indices into
    /// `variant_ids`). Variants without an ok output abstain; an input whose
    /// PUT run failed is discarded.
    pub fn elect_input(&self, i: usize, subset: &[usize], strategy: ElectionStrategy) -> Option<ElectionTrace> {
        let put_out = self.put[i].as_deref()?;
        let votes: Vec<(String, String)> = subset
            .iter()
            .filter_map(|&v| {
                self.variants[v][i]
                    .as_ref()
                    .map(|o| (self.variant_ids[v].clone(), o.clone()))
            })
            .collect();
        if votes.is_empty() {
            return None;
        }
        elect(strategy, put_out, &votes)
    }

    /// One candidate per input that produced an election, ordered by input id.
    pub fn candidates(&self, subset: &[usize], strategy: ElectionStrategy) -> Vec<CandidateTestCase> {
        let mut out: Vec<CandidateTestCase> = (0..self.inputs.len())
            .filter_map(|i| {
                self.elect_input(i, subset, strategy).map(|election| CandidateTestCase {
                    input: self.inputs[i].clone(),
                    oracle: election.winner.clone(),
                    election,
                })
            })
            .collect();
        out.sort_by(|a, b| a.input.input_id.cmp(&b.input.input_id));
        out
    }

    pub fn all_variants(&self) -> Vec<usize> {
        (0..self.variant_ids.len()).collect()
    }
}

/// Executes the PUT and all variants on every input and elects oracles.
pub fn run_differential(
    sandbox: &Sandbox,
    put: &SourceProgram,
    variants: &[ProgramVariant],
    inputs: &[GeneratedInput],
    strategy: ElectionStrategy,
) -> Result<Vec<CandidateTestCase>, DiffError> {
    if variants.is_empty() {
        return Err(DiffError::NoSurvivingVariants);
    }
    let matrix = OutputMatrix::build(sandbox, put, variants, inputs)?;
    let discarded = matrix.put.iter().filter(|o| o.is_none()).count();
    if discarded > 0 {
        tracing::info!(event = "inputs_discarded_put_failed", count = discarded);
    }
    Ok(matrix.candidates(&matrix.all_variants(), strategy))
}
