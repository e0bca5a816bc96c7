//! UTC timestamps at millisecond precision.

use alloc::string::String;
use core::fmt;

use chrono::{DateTime, SecondsFormat, Utc};

/// Milliseconds since the Unix epoch, rendered as RFC 3339 with a `Z` suffix
/// and exactly three fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid RFC 3339 timestamp {0:?}")]
pub struct TimestampError(pub String);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    /// Parses any RFC 3339 timestamp; offsets are normalized to UTC and
    /// sub-millisecond digits are dropped.
    pub fn parse(s: &str) -> Result<Self, TimestampError> {
        let dt = DateTime::parse_from_rfc3339(s).map_err(|_| TimestampError(s.into()))?;
        let ms = dt.with_timezone(&Utc).timestamp_millis();
        // Keep only instants that render back through chrono.
        DateTime::<Utc>::from_timestamp_millis(ms).ok_or_else(|| TimestampError(s.into()))?;
        Ok(Timestamp(ms))
    }

    pub fn to_rfc3339(self) -> String {
        match DateTime::<Utc>::from_timestamp_millis(self.0) {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Millis, true),
            None => String::from("invalid"),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_offsets_and_precision() {
        let t = Timestamp::parse("2026-03-01T10:00:00.123456+02:00").unwrap();
        assert_eq!(t.to_rfc3339(), "2026-03-01T08:00:00.123Z");
        let t = Timestamp::parse("2026-03-01T08:00:00Z").unwrap();
        assert_eq!(t.to_rfc3339(), "2026-03-01T08:00:00.000Z");
    }

    #[test]
    fn rejects_garbage() {
        assert!(Timestamp::parse("yesterday").is_err());
        assert!(Timestamp::parse("2026-13-01T00:00:00Z").is_err());
    }
}
