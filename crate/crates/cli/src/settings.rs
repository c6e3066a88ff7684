//! Command-line flags, the optional TOML config file and their merge.
//! Flags win over the file; the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use bughunt_core::eval::{
    DtMode, IgMode, PgMode, RunConfig, DEFAULT_INPUT_POOL, DEFAULT_MAX_ROUNDS, DEFAULT_VARIANT_POOL,
};
use bughunt_core::llm::DEFAULT_TEMPERATURE;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "bughunt",
    version,
    about = "Generate bug-revealing tests for programs that pass their suite"
)]
pub struct Cli {
    /// Log filter (tracing env-filter syntax); overrides BUGHUNT_LOG.
    #[arg(long, global = true)]
    pub log: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate test cases for one task and write the run artifacts.
    Run {
        task_dir: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the repetition protocol over every task of a corpus.
    Evaluate {
        corpus_dir: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the six-pattern component ablation over a corpus.
    Ablate {
        corpus_dir: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Pattern ids to run (1-6), comma separated.
        #[arg(long, value_delimiter = ',')]
        patterns: Option<Vec<u8>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Variants per round; a comma-separated list for evaluate and ablate.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub input_pool: Option<usize>,
    /// Variant samples drawn before filtering.
    #[arg(long)]
    pub variant_pool: Option<usize>,
    #[arg(long)]
    pub pg: Option<PgMode>,
    #[arg(long)]
    pub ig: Option<IgMode>,
    #[arg(long)]
    pub dt: Option<DtMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// JSON map of scripted responses for the mock backend.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Write responses from the live or mock backend into the cache.
    #[arg(long)]
    pub record: bool,
    /// Worker threads for execution (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Treat the canonical program as the program under test.
    #[arg(long)]
    pub correct_put: bool,
    /// Directory holding prompt template overrides (`<template_id>.txt`).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Mirrors [`CommonArgs`]; every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<KList>,
    pub input_pool: Option<usize>,
    pub variant_pool: Option<usize>,
    pub pg: Option<String>,
    pub ig: Option<String>,
    pub dt: Option<String>,
    pub seed: Option<u64>,
    pub max_rounds: Option<usize>,
    pub temperature: Option<f64>,
    pub backend: Option<BackendChoice>,
    pub mock_script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub record: Option<bool>,
    pub jobs: Option<usize>,
    pub correct_put: Option<bool>,
    pub prompts: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub patterns: Option<Vec<u8>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum KList {
    One(usize),
    Many(Vec<usize>),
}

impl KList {
    fn into_vec(self) -> Vec<usize> {
        match self {
            KList::One(k) => vec![k],
            KList::Many(ks) => ks,
        }
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone)]
pub struct Settings {
    pub ks: Vec<usize>,
    pub run: RunConfig,
    pub temperature: f64,
    pub backend: BackendChoice,
    pub mock_script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub record: bool,
    pub jobs: Option<usize>,
    pub correct_put: bool,
    pub prompts: Option<PathBuf>,
    pub out: PathBuf,
    pub patterns: Option<Vec<u8>>,
}

pub const DEFAULT_SWEEP: [usize; 5] = [2, 4, 6, 8, 10];

fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_mode<T: std::str::FromStr<Err = String>>(value: Option<String>) -> Result<Option<T>, CliError> {
    value.map(|v| v.parse().map_err(CliError::Config)).transpose()
}

impl Settings {
    /// `sweep` selects the default `k` list: a single value for `run`, the
    /// standard sweep for evaluate and ablate.
    pub fn resolve(args: CommonArgs, patterns: Option<Vec<u8>>, sweep: bool) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };
        let ks = args.k.or_else(|| file.k.map(KList::into_vec)).unwrap_or_else(|| {
            if sweep {
                DEFAULT_SWEEP.to_vec()
            } else {
                vec![DEFAULT_VARIANT_POOL]
            }
        });
        if ks.is_empty() {
            return Err(CliError::Config("--k needs at least one value".into()));
        }
        if !sweep && ks.len() != 1 {
            return Err(CliError::Config("run takes a single --k value".into()));
        }
        let defaults = RunConfig::default();
        let run = RunConfig {
            k: ks[0],
            input_pool: args.input_pool.or(file.input_pool).unwrap_or(DEFAULT_INPUT_POOL),
            variant_pool: args.variant_pool.or(file.variant_pool).unwrap_or(DEFAULT_VARIANT_POOL),
            pg_mode: args.pg.or(parse_mode(file.pg)?).unwrap_or(defaults.pg_mode),
            ig_mode: args.ig.or(parse_mode(file.ig)?).unwrap_or(defaults.ig_mode),
            dt_mode: args.dt.or(parse_mode(file.dt)?).unwrap_or(defaults.dt_mode),
            seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
            max_rounds: args.max_rounds.or(file.max_rounds).unwrap_or(DEFAULT_MAX_ROUNDS),
        };
        for &k in &ks {
            run.with_k(k).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let patterns = patterns.or(file.patterns);
        if let Some(ps) = &patterns {
            if ps.is_empty() || ps.iter().any(|p| !(1..=6).contains(p)) {
                return Err(CliError::Config("--patterns takes ids between 1 and 6".into()));
            }
        }
        let temperature = args.temperature.or(file.temperature).unwrap_or(DEFAULT_TEMPERATURE);
        if !(0.0..=2.0).contains(&temperature) {
            return Err(CliError::Config(format!("temperature {temperature} is outside [0, 2]")));
        }
        if args.jobs == Some(0) || file.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        Ok(Self {
            ks,
            run,
            temperature,
            backend: args.backend.or(file.backend).unwrap_or(BackendChoice::Replay),
            mock_script: args.mock_script.or(file.mock_script),
            cache_dir: args.cache_dir.or(file.cache_dir),
            record: args.record || file.record.unwrap_or(false),
            jobs: args.jobs.or(file.jobs),
            correct_put: args.correct_put || file.correct_put.unwrap_or(false),
            prompts: args.prompts.or(file.prompts),
            out: args.out.or(file.out).unwrap_or_else(|| PathBuf::from("bughunt-out")),
            patterns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = Settings::resolve(CommonArgs::default(), None, true).unwrap();
        assert_eq!(s.ks, DEFAULT_SWEEP);
        assert_eq!(s.backend, BackendChoice::Replay);
        let s = Settings::resolve(CommonArgs::default(), None, false).unwrap();
        assert_eq!(s.ks, [10]);
        assert_eq!(s.run.k, 10);
    }

    #[test]
    fn zero_k_rejected() {
        let args = CommonArgs {
            k: Some(vec![0]),
            ..CommonArgs::default()
        };
        assert!(matches!(Settings::resolve(args, None, false), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "k = [2, 4]\nseed = 9\ninput_pool = 20\npg = \"filtered\"\n").unwrap();
        let args = CommonArgs {
            seed: Some(3),
            config: Some(path.clone()),
            ..CommonArgs::default()
        };
        let s = Settings::resolve(args, None, true).unwrap();
        assert_eq!(s.ks, [2, 4]);
        assert_eq!(s.run.seed, 3);
        assert_eq!(s.run.input_pool, 20);
        assert_eq!(s.run.pg_mode, PgMode::Filtered);
    }

    #[test]
    fn unknown_file_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "kay = 3\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            ..CommonArgs::default()
        };
        assert!(matches!(Settings::resolve(args, None, true), Err(CliError::Config(_))));
    }

    #[test]
    fn bad_patterns_rejected() {
        assert!(Settings::resolve(CommonArgs::default(), Some(vec![7]), true).is_err());
    }
}
