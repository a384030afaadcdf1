//! DTN time: milliseconds since 2000-01-01T00:00:00Z.

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Seconds between the Unix epoch and the DTN epoch.
const DTN_EPOCH_UNIX_SECS: u64 = 946_684_800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DtnTime(pub u64);

impl DtnTime {
    pub const fn from_millis(ms: u64) -> Self {
        DtnTime(ms)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn now() -> Self {
        let unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        DtnTime(unix_ms.saturating_sub(DTN_EPOCH_UNIX_SECS * 1000))
    }

    pub fn saturating_add(self, ms: u64) -> Self {
        DtnTime(self.0.saturating_add(ms))
    }

    pub fn saturating_sub(self, other: DtnTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl fmt::Display for DtnTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}
