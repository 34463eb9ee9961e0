use std::fmt;
use std::process::ExitCode;

use attrib_core::attribution::AttributionError;
use attrib_core::evaluation::EvaluationError;
use attrib_core::model::{CheckpointError, ModelError};

/// A command failure with its exit code: 2 for bad input or usage, 1 for
/// internal errors and failed checks.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(msg: impl fmt::Display) -> Self {
        Self { code: 2, message: msg.to_string() }
    }

    pub fn internal(msg: impl fmt::Display) -> Self {
        Self { code: 1, message: msg.to_string() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::input(format!("checkpoint: {e}"))
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Data(_)
            | ModelError::EmptySequence
            | ModelError::InvalidConfig(_)
            | ModelError::EmptyDataset { .. }
            | ModelError::VocabMismatch { .. }
            | ModelError::SequenceTooLong { .. }
            | ModelError::TokenOutOfRange { .. }
            | ModelError::ClassOutOfRange { .. } => Failure::input(e),
            _ => Failure::internal(e),
        }
    }
}

impl From<AttributionError> for Failure {
    fn from(e: AttributionError) -> Self {
        match e {
            AttributionError::Config(_) => Failure::input(e),
            AttributionError::Model(m) => m.into(),
            AttributionError::AtSentence { index, source } => {
                let inner: Failure = (*source).into();
                Failure {
                    code: inner.code,
                    message: format!("sentence {index}: {}", inner.message),
                }
            }
            _ => Failure::internal(e),
        }
    }
}

impl From<EvaluationError> for Failure {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Attribution(a) => a.into(),
            EvaluationError::Model(m) => m.into(),
            EvaluationError::EmptySubset
            | EvaluationError::InsufficientOverlap { .. }
            | EvaluationError::InvalidArgument(_)
            | EvaluationError::TooFewPoints(_)
            | EvaluationError::ZeroVariance
            | EvaluationError::LengthMismatch { .. } => Failure::input(e),
        }
    }
}
