use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("mask is empty or degenerate (fewer than 3 non-collinear pixels)")]
    EmptyOrDegenerate,
    #[error("no template satisfies the constraints: {0}")]
    NoTemplate(String),
    #[error("template orientation mismatch: {0}")]
    OrientationMismatch(String),
    #[error("single-hand hold template {0} requires an other-hand template")]
    MissingOtherHand(String),
    #[error("hand anchor not visible in frame {frame}")]
    HandInvisible { frame: usize },
    #[error("malformed caption at byte {offset}: {reason}")]
    MalformedCaption { offset: usize, reason: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
