//! Command errors and their stable exit codes.

use std::path::Path;

use guidestage_core::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

/// Exit codes: 1 I/O or failed self-check, 2 unreadable or invalid input,
/// 3 no matching template, 4 degenerate product mask, 5 non-finite training
/// loss, 6 artifact shape mismatch.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no template: {0}")]
    NoTemplate(String),
    #[error("degenerate product mask: {0}")]
    DegenerateMask(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("self-check failed: {0}")]
    SelfCheck(String),
    #[error(transparent)]
    Core(CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::SelfCheck(_) => 1,
            CliError::Parse(_) => 2,
            CliError::NoTemplate(_) => 3,
            CliError::DegenerateMask(_) => 4,
            CliError::NonFiniteLoss(_) => 5,
            CliError::Shape(_) => 6,
            CliError::Core(e) => match e {
                CoreError::NoTemplate(_) => 3,
                CoreError::EmptyOrDegenerate => 4,
                CoreError::ShapeMismatch { .. } => 6,
                _ => 2,
            },
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NoTemplate(m) => CliError::NoTemplate(m),
            CoreError::EmptyOrDegenerate => CliError::DegenerateMask(e.to_string()),
            CoreError::ShapeMismatch { .. } => CliError::Shape(e.to_string()),
            e => CliError::Core(e),
        }
    }
}
