use mooclet_core::{Error, ErrorKind};
use serde::{Deserialize, Serialize};

/// Error body returned by every failing endpoint, wrapped as
/// `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorKind, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn status(&self) -> u16 {
        status_for(self.code)
    }

    /// The engine error this code stands for.
    pub fn into_core(self) -> Error {
        Error::from_kind(self.code, self.message)
    }
}

/// HTTP status of each error code.
pub fn status_for(kind: ErrorKind) -> u16 {
    match kind {
        ErrorKind::Validation => 400,
        ErrorKind::Permission => 403,
        ErrorKind::NotFound => 404,
        ErrorKind::NoVersions | ErrorKind::Conflict | ErrorKind::Provenance => 409,
        ErrorKind::Budget => 429,
        ErrorKind::Internal => 500,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::new(e.kind(), e.to_string())
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ErrorBody {
    pub error: ApiError,
}
