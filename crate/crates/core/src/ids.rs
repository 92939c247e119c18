//! Identifier types, pseudonyms included.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;

use crate::error::Error;

macro_rules! numeric_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl $name {
            pub const PREFIX: &'static str = $prefix;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                let digits = s.strip_prefix($prefix).unwrap_or(s);
                digits.parse::<u64>().map($name).map_err(|_| {
                    Error::validation(format!("malformed {} id {s:?}", stringify!($name)))
                })
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

numeric_id!(
    /// Engine-generated MOOClet identifier, rendered as `m<n>`.
    MoocletId,
    "m"
);
numeric_id!(
    /// Engine-generated version identifier, rendered as `v<n>`. Unique across
    /// the whole engine so that a version can never be confused with one
    /// belonging to another MOOClet. Ordering is numeric, which is the
    /// tie-breaking order used by every policy.
    VersionId,
    "v"
);
numeric_id!(
    /// Identifier of one assignment decision, rendered as `a<n>`.
    AssignmentId,
    "a"
);
numeric_id!(
    /// Rubric question identifier, rendered as `q<n>`.
    QuestionId,
    "q"
);

/// Pseudonymous learner token. Raw learner identities never enter the
/// engine's state; they are replaced by a keyed hash at the boundary.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pseudonym(String);

impl Pseudonym {
    pub const PREFIX: &'static str = "p_";

    /// Accepts an already-pseudonymous token, e.g. from a query filter.
    pub fn parse(token: &str) -> Result<Self, Error> {
        let hex_part = token
            .strip_prefix(Self::PREFIX)
            .ok_or_else(|| Error::validation(format!("not a pseudonym: {token:?}")))?;
        if hex_part.len() != 32 || !hex_part.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::validation(format!("not a pseudonym: {token:?}")));
        }
        Ok(Pseudonym(token.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Keyed one-way mapping from raw learner identities to pseudonyms.
#[derive(Clone)]
pub struct Pseudonymizer {
    key: Vec<u8>,
}

impl Pseudonymizer {
    pub fn new(key: impl AsRef<[u8]>) -> Self {
        Pseudonymizer {
            key: key.as_ref().to_vec(),
        }
    }

    pub fn pseudonym(&self, raw: &str) -> Pseudonym {
        let mut mac =
            Hmac::<Sha256>::new_from_slice(&self.key).expect("hmac accepts any key length");
        mac.update(raw.as_bytes());
        let digest = mac.finalize().into_bytes();
        Pseudonym(format!(
            "{}{}",
            Pseudonym::PREFIX,
            hex::encode(&digest[..16])
        ))
    }
}

impl fmt::Debug for Pseudonymizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Pseudonymizer(..)")
    }
}

/// Microseconds since the Unix epoch, UTC. Serialized as ISO-8601.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn now() -> Self {
        Timestamp(Utc::now().timestamp_micros())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_micros(self.0)
            .single()
            .expect("timestamp within chrono range")
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(
            &self
                .to_datetime()
                .to_rfc3339_opts(SecondsFormat::Micros, true),
        )
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp_micros()))
            .map_err(|e| Error::validation(format!("bad timestamp {s:?}: {e}")))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Source of server-side timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    /// Wall clock, clamped so it never runs backwards.
    System,
    /// Deterministic clock: 2026-01-01T00:00:00Z plus one millisecond per tick.
    Logical,
}

#[derive(Debug, Clone)]
pub(crate) struct Clock {
    kind: ClockKind,
    last: Timestamp,
}

pub(crate) const LOGICAL_EPOCH: Timestamp = Timestamp(1_767_225_600_000_000);

impl Clock {
    pub fn new(kind: ClockKind) -> Self {
        let last = match kind {
            ClockKind::System => Timestamp(i64::MIN),
            ClockKind::Logical => Timestamp(LOGICAL_EPOCH.0 - 1_000),
        };
        Clock { kind, last }
    }

    pub fn tick(&mut self) -> Timestamp {
        let next = match self.kind {
            ClockKind::System => Timestamp::now().max(self.last),
            ClockKind::Logical => Timestamp(self.last.0 + 1_000),
        };
        self.last = next;
        next
    }

    /// Never hand out a timestamp earlier than one already observed.
    pub fn observe(&mut self, ts: Timestamp) {
        self.last = self.last.max(ts);
    }
}
