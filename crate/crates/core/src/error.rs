use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Errors raised by engine operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Validation(String),
    #[error("permission denied: {0}")]
    Permission(String),
    #[error("privacy budget exhausted: {0}")]
    Budget(String),
    #[error("no assignable versions: {0}")]
    NoVersions(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Provenance(String),
    /// A reward was already recorded for the assignment.
    #[error("{0}")]
    DuplicateReward(String),
    #[error("corrupt policy state: {0}")]
    StateCorruption(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Internal failure reported by a remote engine.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Stable error categories. These are the codes that cross the API boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    NotFound,
    Validation,
    Permission,
    Budget,
    NoVersions,
    Conflict,
    Provenance,
    Internal,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 8] = [
        ErrorKind::NotFound,
        ErrorKind::Validation,
        ErrorKind::Permission,
        ErrorKind::Budget,
        ErrorKind::NoVersions,
        ErrorKind::Conflict,
        ErrorKind::Provenance,
        ErrorKind::Internal,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::NotFound => "not_found",
            ErrorKind::Validation => "validation",
            ErrorKind::Permission => "permission",
            ErrorKind::Budget => "budget",
            ErrorKind::NoVersions => "no_versions",
            ErrorKind::Conflict => "conflict",
            ErrorKind::Provenance => "provenance",
            ErrorKind::Internal => "internal",
        }
    }

    pub fn from_code(code: &str) -> Option<ErrorKind> {
        ErrorKind::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for ErrorKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for ErrorKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        ErrorKind::from_code(&code)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown error code {code:?}")))
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NotFound(_) => ErrorKind::NotFound,
            Error::Validation(_) => ErrorKind::Validation,
            Error::Permission(_) => ErrorKind::Permission,
            Error::Budget(_) => ErrorKind::Budget,
            Error::NoVersions(_) => ErrorKind::NoVersions,
            Error::Conflict(_) | Error::DuplicateReward(_) => ErrorKind::Conflict,
            Error::Provenance(_) => ErrorKind::Provenance,
            Error::StateCorruption(_) | Error::Journal(_) | Error::Io(_) | Error::Internal(_) => {
                ErrorKind::Internal
            }
        }
    }

    /// Rebuilds an error from its wire code.
    pub fn from_kind(kind: ErrorKind, message: impl Into<String>) -> Self {
        let m = message.into();
        match kind {
            ErrorKind::NotFound => Error::NotFound(m),
            ErrorKind::Validation => Error::Validation(m),
            ErrorKind::Permission => Error::Permission(m),
            ErrorKind::Budget => Error::Budget(m),
            ErrorKind::NoVersions => Error::NoVersions(m),
            ErrorKind::Conflict => Error::Conflict(m),
            ErrorKind::Provenance => Error::Provenance(m),
            ErrorKind::Internal => Error::Internal(m),
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
