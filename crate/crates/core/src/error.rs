use thiserror::Error;

use crate::bundle_io::BundleError;
use crate::diff::DiffError;
use crate::eval::EvalError;
use crate::inputs::InputError;
use crate::llm::LlmError;
use crate::sandbox::ExecError;
use crate::variants::VariantError;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("program source is empty")]
    EmptySource,
    #[error("task id is empty")]
    EmptyTaskId,
    #[error("task `{0}` has an empty test suite")]
    EmptySuite(String),
}

/// Umbrella error used by the pipeline drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Variant(#[from] VariantError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
