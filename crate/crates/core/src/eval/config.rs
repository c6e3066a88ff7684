use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::ElectionStrategy;

/// How program variants are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgMode {
    /// Spec-only generation, no filtering.
    Basic,
    /// Spec-only generation filtered by the existing suite.
    Filtered,
    /// Put-guided generation filtered by the existing suite.
    Ours,
}

/// How test inputs are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgMode {
    /// Inputs written directly by the model.
    Basic,
    /// Inputs from a model-written seeded generator.
    Ours,
}

/// How oracles are elected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtMode {
    /// Majority vote including the PUT.
    Basic,
    /// Most frequent output among those differing from the PUT.
    Ours,
}

impl DtMode {
    pub fn strategy(self) -> ElectionStrategy {
        match self {
            DtMode::Basic => ElectionStrategy::Majority,
            DtMode::Ours => ElectionStrategy::Diversity,
        }
    }
}

macro_rules! mode_strings {
    ($ty:ty { $($variant:ident => $s:literal),* }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$ty>::$variant => $s),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok(<$ty>::$variant),)*
                    other => Err(format!("unknown mode `{other}`")),
                }
            }
        }
    };
}

mode_strings!(PgMode { Basic => "basic", Filtered => "filtered", Ours => "ours" });
mode_strings!(IgMode { Basic => "basic", Ours => "ours" });
mode_strings!(DtMode { Basic => "basic", Ours => "ours" });

pub const DEFAULT_INPUT_POOL: usize = 100;
pub const DEFAULT_VARIANT_POOL: usize = 10;
/// C(10, 5): the largest round count a pool of 10 ever needs.
pub const DEFAULT_MAX_ROUNDS: usize = 252;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Variants per differential round.
    pub k: usize,
    pub input_pool: usize,
    /// Variant samples drawn before filtering.
    pub variant_pool: usize,
    pub pg_mode: PgMode,
    pub ig_mode: IgMode,
    pub dt_mode: DtMode,
    pub seed: u64,
    pub max_rounds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_VARIANT_POOL,
            input_pool: DEFAULT_INPUT_POOL,
            variant_pool: DEFAULT_VARIANT_POOL,
            pg_mode: PgMode::Ours,
            ig_mode: IgMode::Ours,
            dt_mode: DtMode::Ours,
            seed: 0,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k == 0 {
            return Err(EvalError::InvalidConfig("k must be at least 1".into()));
        }
        if self.k > self.variant_pool {
            return Err(EvalError::InvalidConfig(format!(
                "k ({}) exceeds variant_pool ({})",
                self.k, self.variant_pool
            )));
        }
        if self.input_pool == 0 {
            return Err(EvalError::InvalidConfig("input_pool must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(EvalError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_modes(&self, pg: PgMode, ig: IgMode, dt: DtMode) -> Self {
        Self {
            pg_mode: pg,
            ig_mode: ig,
            dt_mode: dt,
            ..self.clone()
        }
    }

    pub fn with_k(&self, k: usize) -> Self {
        Self { k, ..self.clone() }
    }
}
