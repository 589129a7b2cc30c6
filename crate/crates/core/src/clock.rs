//! Virtual time. Operations never read the wall clock; callers pass `now`,
//! and only the daemon takes it from [`wall_clock`].

use chrono::{DateTime, TimeZone, Utc};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<Utc>;

pub const MS_PER_DAY: f64 = 86_400_000.0;

pub fn wall_clock() -> Timestamp {
    Utc::now()
}

pub fn to_ms(ts: Timestamp) -> i64 {
    ts.timestamp_millis()
}

pub fn from_ms(ms: i64) -> Timestamp {
    Utc.timestamp_millis_opt(ms).single().unwrap_or_default()
}

/// Fractional days from `earlier` to `later` (negative if reversed).
pub fn days_between(later_ms: i64, earlier_ms: i64) -> f64 {
    (later_ms - earlier_ms) as f64 / MS_PER_DAY
}

pub fn parse_ts(s: &str) -> Result<Timestamp> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::InvalidArgument(format!("bad timestamp {s:?}: {e}")))
}

pub fn format_ts(ts: Timestamp) -> String {
    ts.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn plus_days(ts: Timestamp, days: f64) -> Timestamp {
    from_ms(to_ms(ts) + (days * MS_PER_DAY).round() as i64)
}
