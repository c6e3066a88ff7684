//! Test generation for programs that already pass their existing suite.
//!
//! The pipeline asks a language model for program variants and for a seeded
//! input generator, runs the program under test and the variants on every
//! generated input, and elects an oracle from the outputs that disagree with
//! the program under test. With a canonical solution at hand, the generated
//! test cases are classified and scored.

pub mod bundle_io;
pub mod diff;
pub mod error;
pub mod eval;
pub mod inputs;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod sandbox;
pub mod variants;

pub use error::{Error, ModelError, Result};
pub use model::*;
pub use pipeline::Engine;
