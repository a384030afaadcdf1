//! Scope-isolation audit over a completed run's event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, Digest, EventKind};
use crate::bpa::RoutePattern;
use crate::bundle::EndpointId;

/// What the auditor needs to know about one instance besides the log.
#[derive(Debug, Clone)]
pub struct InstanceFacts {
    pub node: String,
    pub scope: String,
    pub discovery: bool,
    /// Node EIDs plus every EID registered in this instance.
    pub eids: Vec<EndpointId>,
    /// Destination patterns from configuration (all profiles) and the final
    /// table, learned entries included.
    pub patterns: Vec<RoutePattern>,
    pub final_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub verdict: Verdict,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// PASS iff (a) every digest is parsed under exactly one scope label, (b)
/// tables outside discovery scopes only ever hold sanctioned configurations,
/// and (c) no route destination in scope Y matches an EID of another scope.
pub fn audit_scope_isolation(events: &[AuditEvent], instances: &[InstanceFacts]) -> AuditVerdict {
    let mut violations = Vec::new();

    let mut parsers: BTreeMap<Digest, BTreeMap<String, Vec<&AuditEvent>>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::Parse) {
        parsers.entry(e.digest).or_default().entry(e.scope.clone()).or_default().push(e);
    }
    for (digest, by_scope) in &parsers {
        if by_scope.len() > 1 {
            let offenders: Vec<String> = by_scope
                .values()
                .map(|evs| {
                    let e = evs[0];
                    format!("{}/{} at {}", e.node, e.scope, e.time)
                })
                .collect();
            violations.push(format!("bundle {} parsed in {} scopes: {}", digest.short(), by_scope.len(), offenders.join(", ")));
        }
    }

    for facts in instances.iter().filter(|f| !f.discovery) {
        let mine = |e: &&AuditEvent| e.node == facts.node && e.scope == facts.scope;
        for e in events.iter().filter(mine).filter(|e| e.kind == EventKind::RoutesLearned) {
            violations.push(format!("{}/{}: unsanctioned table change at {} ({})", facts.node, facts.scope, e.time, e.detail));
        }
        let sanctioned = events.iter().filter(mine).rfind(|e| e.kind == EventKind::RoutesSet);
        match sanctioned {
            Some(e) if e.digest == facts.final_hash => {}
            Some(e) => violations.push(format!(
                "{}/{}: final table {} differs from sanctioned {}",
                facts.node,
                facts.scope,
                facts.final_hash.short(),
                e.digest.short()
            )),
            None => violations.push(format!("{}/{}: no sanctioned table recorded", facts.node, facts.scope)),
        }
    }

    let mut owners: BTreeMap<&EndpointId, BTreeSet<&str>> = BTreeMap::new();
    for f in instances {
        for eid in &f.eids {
            owners.entry(eid).or_default().insert(&f.scope);
        }
    }
    let mut seen = BTreeSet::new();
    for f in instances {
        for pattern in f.patterns.iter().filter(|p| **p != RoutePattern::Default) {
            for (eid, scopes) in &owners {
                for other in scopes.iter().filter(|s| **s != f.scope) {
                    if pattern.matches(eid) && seen.insert((f.node.clone(), f.scope.clone(), pattern.to_string(), eid.to_string())) {
                        violations.push(format!(
                            "{}/{}: route {pattern} matches {eid} of scope {other}",
                            f.node, f.scope
                        ));
                    }
                }
            }
        }
    }

    AuditVerdict {
        verdict: if violations.is_empty() { Verdict::Pass } else { Verdict::Fail },
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::AuditLog;
    use crate::bundle::parse_eid;
    use crate::time::DtnTime;

    fn facts(node: &str, scope: &str, eids: &[&str], patterns: &[&str], hash: Digest) -> InstanceFacts {
        InstanceFacts {
            node: node.into(),
            scope: scope.into(),
            discovery: false,
            eids: eids.iter().map(|e| parse_eid(e).unwrap()).collect(),
            patterns: patterns.iter().map(|p| p.parse().unwrap()).collect(),
            final_hash: hash,
        }
    }

    #[test]
    fn clean_log_passes() {
        let log = AuditLog::new();
        let h = Digest::of(b"table");
        log.record(DtnTime(0), "n1", "s1", EventKind::RoutesSet, h, "");
        log.record(DtnTime(0), "n1", "s2", EventKind::RoutesSet, h, "");
        log.record(DtnTime(1), "n1", "s1", EventKind::Parse, Digest::of(b"inner"), "");
        log.record(DtnTime(1), "n1", "s2", EventKind::Parse, Digest::of(b"outer"), "");
        let f = [
            facts("n1", "s1", &["ipn:1.0"], &["ipn:2.*", "*"], h),
            facts("n1", "s2", &["dtn://l1.s2"], &["dtn://l3.s2"], h),
        ];
        assert!(audit_scope_isolation(&log.events(), &f).passed());
    }

    #[test]
    fn each_condition_detected() {
        let log = AuditLog::new();
        let h = Digest::of(b"table");
        log.record(DtnTime(0), "n1", "s1", EventKind::RoutesSet, h, "");
        log.record(DtnTime(0), "n1", "s2", EventKind::RoutesSet, h, "");
        log.record(DtnTime(1), "n1", "s1", EventKind::Parse, Digest::of(b"inner"), "");
        log.record(DtnTime(2), "n2", "s2", EventKind::Parse, Digest::of(b"inner"), "");
        log.record(DtnTime(3), "n1", "s2", EventKind::RoutesLearned, Digest::of(b"x"), "learned");
        let f = [
            facts("n1", "s1", &["ipn:1.0"], &[], h),
            facts("n1", "s2", &["dtn://l1.s2"], &["ipn:1.*"], Digest::of(b"x")),
        ];
        let v = audit_scope_isolation(&log.events(), &f);
        assert!(!v.passed());
        assert_eq!(v.violations.len(), 4, "{:#?}", v.violations);
    }
}
