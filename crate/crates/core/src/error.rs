use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),

    #[error("unknown state '{0}'")]
    UnknownState(String),

    #[error("unknown state '{label}' at line {line}")]
    UnknownStateAt { label: String, line: u64 },

    #[error("{message} at line {line}")]
    Parse { line: u64, message: String },

    #[error("invalid model: {}", join_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("row '{label}' sums to {}", crate::model::fmt_sum(*.sum))]
    RowSum { label: String, sum: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("overrides for row '{row}' sum to {sum}, exceeding 1")]
    OverrideSum { row: String, sum: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's input (unknown labels, bad
    /// scenario overrides) rather than by malformed documents or I/O.
    pub fn is_semantic(&self) -> bool {
        matches!(
            self,
            Error::UnknownState(_)
                | Error::OverrideSum { .. }
                | Error::Scenario(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::InvalidModel(_)
                | Error::InsufficientData(_)
        )
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
