//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("exercise {0} has an empty concept list")]
    EmptyConceptList(u32),
    #[error("duplicate exercise id {0}")]
    DuplicateId(u32),
    #[error("unknown exercise id {0}")]
    UnknownExercise(u32),
    #[error("non-binary response {response} for student {student}")]
    NonBinaryResponse { student: u32, response: i64 },
    #[error("duplicate step {step} for student {student}")]
    DuplicateStep { student: u32, step: u32 },
    #[error("unknown concept id {0}")]
    UnknownConcept(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty history for student {0}")]
    EmptyHistory(u32),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty bank")]
    EmptyBank,
    #[error("empty list")]
    EmptyList,
    #[error("empty sequence")]
    EmptySequence,
    #[error("training loss diverged (non-finite)")]
    DivergedLoss,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("candidate set of {have} exercises is smaller than list length {need}")]
    CandidateSetTooSmall { have: usize, need: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
}
