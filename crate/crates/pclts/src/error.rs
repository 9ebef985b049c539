//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural mismatch between a parameter vector, network shape, or dataset.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A value or combination of values violates a documented invariant.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that requires data received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Optimizer settings that cannot produce a run (zero budget, bad box, ...).
    #[error("optimizer configuration: {0}")]
    OptimizerConfig(String),

    /// Fine-tuning hit a non-finite loss or produced non-finite weights.
    #[error("training failed at step {step}: {msg}")]
    Training { step: usize, msg: String },

    /// The three-step pipeline cannot continue (e.g. cleaning left < 2 rows).
    #[error("pipeline: {0}")]
    Pipeline(String),

    /// Malformed text input (CSV, config, model file), with a 1-based line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
