//! Scenario reports: a JSON document, the audit log as JSON lines, and a
//! short human-readable summary.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, Digest};

use super::verdict::AuditVerdict;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub phase: usize,
    pub kind: String,
    pub app: String,
    pub tag: String,
    pub passed: bool,
    /// Virtual milliseconds since scenario start.
    pub delivered_at_ms: Option<u64>,
    pub latency_ms: Option<u64>,
    pub bytes: usize,
    pub digest: Option<Digest>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub events: usize,
    pub parses: usize,
    pub deliveries: usize,
    pub forwards: usize,
    pub stores: usize,
    pub deletes: usize,
    pub push_downs: usize,
    pub pop_ups: usize,
    /// Largest number of push-downs any delivered bundle went through.
    pub max_encapsulation_depth: usize,
    /// Every delivered bundle was popped up as often as it was pushed down.
    pub encapsulation_balanced: bool,
    /// Deepest bundle-in-bundle nesting seen on a stream link, counting the
    /// outermost bundle as one level.
    pub max_wire_nesting: usize,
    pub stream_transfers: usize,
    pub bytes_on_wire: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub node: String,
    pub scope: String,
    pub discovery: bool,
    pub initial_hash: Digest,
    pub final_hash: Digest,
    /// Hash of the last sanctioned configuration (initial or profile).
    pub sanctioned_hash: Digest,
    pub profile: Option<String>,
    pub learned_peak: usize,
    pub stored_at_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub mode: String,
    pub duration_ms: u64,
    pub expectations: Vec<ExpectationResult>,
    pub errors: Vec<String>,
    pub audit: AuditVerdict,
    pub metrics: Metrics,
    pub instances: Vec<InstanceReport>,
    /// Host time spent on the run; the only non-deterministic field.
    pub wall_runtime_ms: u64,
    #[serde(skip)]
    pub events: Vec<AuditEvent>,
}

impl ScenarioReport {
    pub fn expectations_passed(&self) -> bool {
        self.expectations.iter().all(|e| e.passed) && self.errors.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.expectations_passed() && self.audit.passed()
    }

    /// Process exit status for a run: audit failure (5) outranks a failed
    /// expectation (1).
    pub fn exit_code(&self) -> i32 {
        if !self.audit.passed() {
            5
        } else if !self.expectations_passed() {
            1
        } else {
            0
        }
    }

    /// The report with host timing removed, for determinism comparisons.
    pub fn without_timing(&self) -> ScenarioReport {
        ScenarioReport { wall_runtime_ms: 0, ..self.clone() }
    }

    pub fn instance(&self, node: &str, scope: &str) -> Option<&InstanceReport> {
        self.instances.iter().find(|i| i.node == node && i.scope == scope)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {}, {} mode)", self.name, self.seed, self.mode);
        for e in &self.expectations {
            let status = if e.passed { "ok  " } else { "FAIL" };
            let latency = e.latency_ms.map_or("-".to_string(), |l| format!("{l} ms"));
            let _ = writeln!(s, "  {status} {} {} at {}: {} bytes, latency {latency}", e.kind, e.tag, e.app, e.bytes);
            if !e.detail.is_empty() {
                let _ = writeln!(s, "       {}", e.detail);
            }
        }
        for err in &self.errors {
            let _ = writeln!(s, "  error: {err}");
        }
        let m = &self.metrics;
        let _ = writeln!(
            s,
            "  {} events, {} push-downs, {} pop-ups, max depth {}, max wire nesting {}",
            m.events, m.push_downs, m.pop_ups, m.max_encapsulation_depth, m.max_wire_nesting
        );
        let verdict = if self.audit.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "  audit: {verdict}");
        for v in &self.audit.violations {
            let _ = writeln!(s, "    {v}");
        }
        let _ = writeln!(s, "  wall time {} ms", self.wall_runtime_ms);
        s
    }

    /// Writes `report.json`, `audit.jsonl` and `summary.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        let mut audit = std::io::BufWriter::new(std::fs::File::create(dir.join("audit.jsonl"))?);
        for e in &self.events {
            serde_json::to_writer(&mut audit, e).map_err(std::io::Error::other)?;
            audit.write_all(b"\n")?;
        }
        audit.flush()?;
        std::fs::write(dir.join("summary.txt"), self.summary())
    }
}
