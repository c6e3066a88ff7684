//! The `bughunt` command line: `run`, `evaluate` and `ablate`.

mod commands;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use bughunt_core::bundle_io::BundleError;
use bughunt_core::llm::LlmError;
use clap::Parser;
use thiserror::Error;
use tracing_subscriber::EnvFilter;

pub use commands::{cmd_ablate, cmd_evaluate, cmd_run, report_json};
pub use settings::{Cli, Command, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] bughunt_core::Error),
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("every task failed ({0} tasks)")]
    AllTasksFailed(usize, i32),
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        CliError::Core(e.into())
    }
}

pub mod exit_code {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const BUNDLE: i32 = 3;
    pub const LLM: i32 = 4;
    pub const EXEC: i32 = 5;
    pub const PIPELINE: i32 = 6;
    pub const EVAL: i32 = 7;
    pub const IO: i32 = 8;
}

pub fn core_exit_code(e: &bughunt_core::Error) -> i32 {
    use bughunt_core::Error as E;
    match e {
        E::Bundle(_) | E::Model(_) => exit_code::BUNDLE,
        E::Llm(_) => exit_code::LLM,
        E::Exec(_) => exit_code::EXEC,
        E::Variant(_) | E::Input(_) | E::Diff(_) => exit_code::PIPELINE,
        E::Eval(_) => exit_code::EVAL,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit_code::CONFIG,
            CliError::Core(e) => core_exit_code(e),
            CliError::Io { .. } => exit_code::IO,
            CliError::AllTasksFailed(_, code) => *code,
        }
    }
}

fn init_logging(filter: Option<&str>) {
    let filter = filter
        .map(EnvFilter::new)
        .or_else(|| EnvFilter::try_from_env("BUGHUNT_LOG").ok())
        .unwrap_or_else(|| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_current_span(false)
        .try_init();
}

/// Parses `args`, runs the command and returns the process exit code. The
/// path of the main report is printed on stdout on success.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit_code::CONFIG
            } else {
                exit_code::OK
            };
        }
    };
    init_logging(cli.log.as_deref());
    let result = match cli.command {
        Command::Run { task_dir, common } => {
            Settings::resolve(common, None, false).and_then(|s| cmd_run(&task_dir, &s))
        }
        Command::Evaluate { corpus_dir, common } => {
            Settings::resolve(common, None, true).and_then(|s| cmd_evaluate(&corpus_dir, &s))
        }
        Command::Ablate {
            corpus_dir,
            common,
            patterns,
        } => Settings::resolve(common, patterns, true).and_then(|s| cmd_ablate(&corpus_dir, &s)),
    };
    match result {
        Ok(path) => {
            println!("{}", path.display());
            exit_code::OK
        }
        Err(e) => {
            tracing::error!(event = "command_failed", error = %e, exit_code = e.exit_code());
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
