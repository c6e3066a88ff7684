//! Repeated differential rounds over subsets of a variant pool.
//!
//! With a pool of `n` variants and `k` per round, every `k`-subset is one
//! round when there are at most `max_rounds` of them; otherwise `max_rounds`
//! distinct subsets are drawn from a seeded RNG. Metrics are averaged over
//! rounds, and F1 is taken from the averaged precision and recall.

use std::collections::BTreeSet;

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, round_verdicts, EvalError, GroundTruth, RunConfig};
use crate::diff::OutputMatrix;
use crate::model::{f1_score, MetricsReport};

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPlan {
    /// Sorted index sets, in lexicographic order.
    pub subsets: Vec<Vec<usize>>,
    /// True when every `k`-subset is present.
    pub enumerated: bool,
}

pub fn select_subsets(pool: usize, k: usize, max_rounds: usize, seed: u64) -> Result<SubsetPlan, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidConfig("k must be at least 1".into()));
    }
    if pool < k {
        return Err(EvalError::PoolTooSmall { pool, k });
    }
    if binomial(pool, k) <= max_rounds as u128 {
        return Ok(SubsetPlan {
            subsets: (0..pool).combinations(k).collect(),
            enumerated: true,
        });
    }
    // Distinct seeds per k keep rounds for different k independent.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32));
    let mut chosen = BTreeSet::new();
    while chosen.len() < max_rounds {
        let mut idx = rand::seq::index::sample(&mut rng, pool, k).into_vec();
        idx.sort_unstable();
        chosen.insert(idx);
    }
    Ok(SubsetPlan {
        subsets: chosen.into_iter().collect(),
        enumerated: false,
    })
}

/// Means over rounds. Counts become fractional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub count: usize,
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Summation order is fixed by sorting, so the mean does not depend on the
/// order rounds were produced in.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn aggregate_rounds(rounds: &[MetricsReport]) -> AggregateMetrics {
    let col = |f: fn(&MetricsReport) -> f64| mean(rounds.iter().map(f).collect());
    let precision = col(|m| m.precision);
    let recall = col(|m| m.recall);
    AggregateMetrics {
        count: rounds.len(),
        tp: col(|m| m.tp as f64),
        fp: col(|m| m.fp as f64),
        fn_: col(|m| m.fn_ as f64),
        tn: col(|m| m.tn as f64),
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

impl AggregateMetrics {
    /// Unweighted mean of per-task aggregates.
    pub fn mean_of(items: &[AggregateMetrics]) -> AggregateMetrics {
        let col = |f: fn(&AggregateMetrics) -> f64| mean(items.iter().map(f).collect());
        let precision = col(|m| m.precision);
        let recall = col(|m| m.recall);
        AggregateMetrics {
            count: items.len(),
            tp: col(|m| m.tp),
            fp: col(|m| m.fp),
            fn_: col(|m| m.fn_),
            tn: col(|m| m.tn),
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub variant_ids: Vec<String>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub k: usize,
    pub pool_size: usize,
    pub enumerated: bool,
    pub rounds: Vec<RoundReport>,
    pub mean: AggregateMetrics,
}

pub fn repetition_protocol(
    matrix: &OutputMatrix,
    truth: &GroundTruth,
    config: &RunConfig,
    put_is_buggy: bool,
) -> Result<AggregateReport, EvalError> {
    let pool = matrix.variant_ids.len();
    let plan = select_subsets(pool, config.k, config.max_rounds, config.seed)?;
    let strategy = config.dt_mode.strategy();
    let rounds: Vec<RoundReport> = plan
        .subsets
        .iter()
        .enumerate()
        .map(|(round, subset)| RoundReport {
            round,
            variant_ids: subset.iter().map(|&v| matrix.variant_ids[v].clone()).collect(),
            metrics: compute_metrics(&round_verdicts(matrix, truth, subset, strategy), put_is_buggy),
        })
        .collect();
    let metrics: Vec<MetricsReport> = rounds.iter().map(|r| r.metrics).collect();
    Ok(AggregateReport {
        k: config.k,
        pool_size: pool,
        enumerated: plan.enumerated,
        mean: aggregate_rounds(&metrics),
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 4), 210);
        assert_eq!(binomial(10, 5), 252);
        assert_eq!(binomial(10, 10), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(200, 100), u128::MAX);
    }

    #[test]
    fn enumerates_when_small() {
        let plan = select_subsets(10, 4, 252, 0).unwrap();
        assert!(plan.enumerated);
        assert_eq!(plan.subsets.len(), 210);
        let distinct: BTreeSet<_> = plan.subsets.iter().collect();
        assert_eq!(distinct.len(), 210);
    }

    #[test]
    fn samples_when_large() {
        let a = select_subsets(20, 10, 50, 7).unwrap();
        assert!(!a.enumerated);
        assert_eq!(a.subsets.len(), 50);
        assert!(a
            .subsets
            .iter()
            .all(|s| s.len() == 10 && s.windows(2).all(|w| w[0] < w[1])));
        assert_eq!(a, select_subsets(20, 10, 50, 7).unwrap());
        assert_ne!(a, select_subsets(20, 10, 50, 8).unwrap());
    }

    #[test]
    fn pool_too_small() {
        assert_eq!(
            select_subsets(3, 4, 10, 0).unwrap_err(),
            EvalError::PoolTooSmall { pool: 3, k: 4 }
        );
    }

    #[test]
    fn two_round_mean() {
        let a = MetricsReport::from_counts(1, 1, 0, 0);
        let b = MetricsReport::from_counts(1, 0, 1, 0);
        let m = aggregate_rounds(&[a, b]);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - 0.75).abs() < 1e-12);
        assert_eq!(m.tp, 1.0);
        assert_eq!(m.fp, 0.5);
    }

    #[test]
    fn empty_rounds_are_zero() {
        let m = aggregate_rounds(&[]);
        assert_eq!((m.count, m.precision, m.f1), (0, 0.0, 0.0));
    }
}
