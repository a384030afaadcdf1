//! Append-only event log shared by every scope instance of a run.
//!
//! Each event carries the scope label of the instance that produced it and
//! the SHA-256 digest of the exact bundle encoding concerned. The isolation
//! auditor works purely from this log.

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::bundle::{decode_bundle, Bundle, BundleError};
use crate::time::DtnTime;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn short(&self) -> String {
        self.to_string()[..16].to_string()
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        if text.len() != 64 {
            return Err(serde::de::Error::custom("digest must be 64 hex characters"));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in text.as_bytes().chunks(2).enumerate() {
            let pair = std::str::from_utf8(chunk).map_err(serde::de::Error::custom)?;
            out[i] = u8::from_str_radix(pair, 16).map_err(serde::de::Error::custom)?;
        }
        Ok(Digest(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Parse,
    Lookup,
    Deliver,
    Forward,
    Store,
    Delete,
    /// An upper-scope bundle handed down through a BIBE-CLA.
    Encapsulate,
    /// An upper-scope bundle recovered from a BPDU.
    Decapsulate,
    /// A sanctioned routing-table configuration; the digest is the table hash.
    RoutesSet,
    /// A discovery-driven table change; the digest is the new table hash.
    RoutesLearned,
}

impl EventKind {
    /// Terminal dispatch outcomes.
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            EventKind::Deliver | EventKind::Forward | EventKind::Store | EventKind::Delete
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub time: DtnTime,
    pub node: String,
    pub scope: String,
    pub kind: EventKind,
    pub digest: Digest,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Default)]
struct LogInner {
    events: Vec<AuditEvent>,
    next_seq: u64,
}

/// Shared, thread-safe append-only log.
#[derive(Clone, Default)]
pub struct AuditLog {
    inner: Arc<Mutex<LogInner>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &self,
        time: DtnTime,
        node: &str,
        scope: &str,
        kind: EventKind,
        digest: Digest,
        detail: impl Into<String>,
    ) {
        let mut inner = self.inner.lock().expect("audit log poisoned");
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.events.push(AuditEvent {
            seq,
            time,
            node: node.to_string(),
            scope: scope.to_string(),
            kind,
            digest,
            detail: detail.into(),
        });
    }

    /// All events ordered by (time, sequence).
    pub fn events(&self) -> Vec<AuditEvent> {
        let mut events = self.inner.lock().expect("audit log poisoned").events.clone();
        events.sort_by_key(|e| (e.time, e.seq));
        events
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("audit log poisoned").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The (node, scope) identity under which a component records events.
#[derive(Clone)]
pub struct ScopeAudit {
    node: String,
    scope: String,
    log: AuditLog,
}

impl ScopeAudit {
    pub fn new(node: impl Into<String>, scope: impl Into<String>, log: AuditLog) -> Self {
        ScopeAudit {
            node: node.into(),
            scope: scope.into(),
            log,
        }
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    pub fn record(&self, time: DtnTime, kind: EventKind, digest: Digest, detail: impl Into<String>) {
        self.log.record(time, &self.node, &self.scope, kind, digest, detail);
    }

    /// Decodes a bundle on behalf of this scope, recording the parse attempt.
    pub fn decode(&self, bytes: &[u8], now: DtnTime) -> Result<Bundle, BundleError> {
        let result = decode_bundle(bytes);
        let detail = match &result {
            Ok(_) => String::new(),
            Err(e) => e.to_string(),
        };
        self.record(now, EventKind::Parse, Digest::of(bytes), detail);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concurrent_appends_are_totally_ordered() {
        let log = AuditLog::new();
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let audit = ScopeAudit::new(format!("n{t}"), "s", log.clone());
                std::thread::spawn(move || {
                    for i in 0..250u64 {
                        audit.record(DtnTime(i), EventKind::Lookup, Digest::of(&[t]), "");
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let events = log.events();
        assert_eq!(events.len(), 1000);
        assert!(events.windows(2).all(|w| (w[0].time, w[0].seq) < (w[1].time, w[1].seq)));
    }

    #[test]
    fn digest_serde_round_trip() {
        let d = Digest::of(b"abc");
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
