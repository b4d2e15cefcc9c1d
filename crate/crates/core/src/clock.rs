//! Time source for memory keys.
//!
//! Deterministic runs use a virtual clock derived from the tick counter so
//! memory keys (and therefore logs and snapshots) are reproducible.

use chrono::{DateTime, Duration, NaiveDateTime, TimeZone, Utc};

/// Compact ISO-8601 basic format used for persistent-memory keys,
/// e.g. `20250613T103022`.
pub const COMPACT_ISO: &str = "%Y%m%dT%H%M%S";

#[derive(Debug, Clone)]
pub enum Clock {
    /// `epoch + tick` seconds.
    Virtual { epoch: DateTime<Utc> },
    Wall,
}

impl Default for Clock {
    fn default() -> Self {
        Clock::Virtual {
            epoch: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

impl Clock {
    pub fn now(&self, tick: u64) -> DateTime<Utc> {
        match self {
            Clock::Virtual { epoch } => *epoch + Duration::seconds(tick as i64),
            Clock::Wall => Utc::now(),
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual { .. })
    }
}

pub fn format_compact(at: DateTime<Utc>) -> String {
    at.format(COMPACT_ISO).to_string()
}

pub fn parse_compact(key: &str) -> Option<DateTime<Utc>> {
    // chrono accepts shorter fields (e.g. single-digit months); insist on the
    // exact 15-character basic form.
    if key.len() != 15 {
        return None;
    }
    NaiveDateTime::parse_from_str(key, COMPACT_ISO)
        .ok()
        .map(|naive| Utc.from_utc_datetime(&naive))
}
