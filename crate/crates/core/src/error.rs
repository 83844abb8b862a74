use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate head/tail split: {head} head classes, {tail} tail classes")]
    DegenerateSplit { head: usize, tail: usize },

    #[error("schedule exceeds data: 2^{levels} > 2^ceil(log2({rho}))")]
    ScheduleExceedsData { levels: usize, rho: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layout mismatch between models")]
    LayoutMismatch,

    #[error("non-finite input at row {row}")]
    NonFiniteInput { row: usize },

    #[error("job {job} diverged at step {step} (loss = {loss})")]
    Diverged { job: String, step: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("class {0} has no samples in the evaluation labels")]
    MissingClass(usize),

    #[error("adapter rank {rank} must be >= 1 and < {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("bad {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error in `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format { .. } => 4,
            _ => 2,
        }
    }
}
