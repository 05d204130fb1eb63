use std::io;

use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid value: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("segment {segment} is never perturbed by the sample set")]
    NeverPerturbed { segment: usize },

    #[error("segment {segment} is perturbed in every sample")]
    AlwaysPerturbed { segment: usize },

    #[error("non-finite attribution at pixel {index}")]
    NonFinite { index: usize },

    #[error("handshake failed: {0}")]
    Handshake(String),

    #[error("model server did not answer within {0:?}")]
    Timeout(std::time::Duration),

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("model server error: {0}")]
    Remote(String),

    #[error("transport error: {0}")]
    Transport(io::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Errors raised while talking to an external model.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::Handshake(_)
                | Error::Timeout(_)
                | Error::MalformedResponse(_)
                | Error::Transport(_)
                | Error::Remote(_)
        )
    }

    /// Whether retrying the same request on a fresh session may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Timeout(_))
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
