//! Static next-hop routing.
//!
//! Lookup order is by specificity, then configuration order: exact
//! entries (configured first, then discovery-learned), ipn-node wildcards,
//! and finally the default route.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audit::Digest;
use crate::bundle::{parse_eid, BundleError, EndpointId};
use crate::cla::ClaAddress;

use super::BpaError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RoutePattern {
    Exact(EndpointId),
    /// `ipn:<node>.*`
    IpnNode(u64),
    /// `*`
    Default,
}

impl RoutePattern {
    pub fn matches(&self, dest: &EndpointId) -> bool {
        match self {
            RoutePattern::Exact(eid) => eid == dest,
            RoutePattern::IpnNode(node) => dest.ipn_node() == Some(*node),
            RoutePattern::Default => true,
        }
    }

    /// 0 = exact, 1 = wildcard, 2 = default.
    pub fn specificity_rank(&self) -> u8 {
        match self {
            RoutePattern::Exact(_) => 0,
            RoutePattern::IpnNode(_) => 1,
            RoutePattern::Default => 2,
        }
    }
}

impl FromStr for RoutePattern {
    type Err = BundleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" {
            return Ok(RoutePattern::Default);
        }
        if let Some(node) = s.strip_prefix("ipn:").and_then(|r| r.strip_suffix(".*")) {
            return parse_eid(&format!("ipn:{node}.0"))
                .map(|eid| RoutePattern::IpnNode(eid.ipn_node().expect("ipn EID")));
        }
        parse_eid(s).map(RoutePattern::Exact)
    }
}

impl fmt::Display for RoutePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoutePattern::Exact(eid) => write!(f, "{eid}"),
            RoutePattern::IpnNode(node) => write!(f, "ipn:{node}.*"),
            RoutePattern::Default => f.write_str("*"),
        }
    }
}

impl Serialize for RoutePattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RoutePattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RouteEntry {
    pub dest: RoutePattern,
    #[serde(flatten)]
    pub next_hop: ClaAddress,
}

impl RouteEntry {
    pub fn new(dest: RoutePattern, next_hop: ClaAddress) -> Self {
        RouteEntry { dest, next_hop }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingTable {
    configured: Vec<RouteEntry>,
    learned: Vec<(EndpointId, ClaAddress)>,
}

impl RoutingTable {
    /// Builds a table from configuration; at most one default entry.
    pub fn new(entries: Vec<RouteEntry>) -> Result<Self, BpaError> {
        let defaults = entries.iter().filter(|e| e.dest == RoutePattern::Default).count();
        if defaults > 1 {
            return Err(BpaError::InvalidRoutes("more than one default route".into()));
        }
        Ok(RoutingTable {
            configured: entries,
            learned: Vec::new(),
        })
    }

    pub fn configured(&self) -> &[RouteEntry] {
        &self.configured
    }

    pub fn learned(&self) -> &[(EndpointId, ClaAddress)] {
        &self.learned
    }

    pub fn next_hops(&self) -> impl Iterator<Item = &ClaAddress> {
        self.configured
            .iter()
            .map(|e| &e.next_hop)
            .chain(self.learned.iter().map(|(_, hop)| hop))
    }

    pub fn lookup(&self, dest: &EndpointId) -> Result<&ClaAddress, BpaError> {
        let exact = self
            .configured
            .iter()
            .find(|e| matches!(&e.dest, RoutePattern::Exact(eid) if eid == dest))
            .map(|e| &e.next_hop)
            .or_else(|| self.learned.iter().find(|(eid, _)| eid == dest).map(|(_, hop)| hop));
        exact
            .or_else(|| {
                self.configured
                    .iter()
                    .find(|e| matches!(e.dest, RoutePattern::IpnNode(_)) && e.dest.matches(dest))
                    .map(|e| &e.next_hop)
            })
            .or_else(|| {
                self.configured
                    .iter()
                    .find(|e| e.dest == RoutePattern::Default)
                    .map(|e| &e.next_hop)
            })
            .ok_or_else(|| BpaError::NoRoute(dest.clone()))
    }

    /// Adds or refreshes a discovery-learned exact route. Returns true if the
    /// table changed.
    pub fn learn(&mut self, eid: EndpointId, hop: ClaAddress) -> bool {
        if let Some(entry) = self.learned.iter_mut().find(|(e, _)| *e == eid) {
            if entry.1 == hop {
                return false;
            }
            entry.1 = hop;
            return true;
        }
        self.learned.push((eid, hop));
        true
    }

    pub fn forget(&mut self, eid: &EndpointId) -> bool {
        let before = self.learned.len();
        self.learned.retain(|(e, _)| e != eid);
        before != self.learned.len()
    }

    pub(crate) fn replace_configured(&mut self, entries: Vec<RouteEntry>) -> Result<(), BpaError> {
        let fresh = RoutingTable::new(entries)?;
        self.configured = fresh.configured;
        Ok(())
    }

    /// Stable digest over the table's full contents.
    pub fn hash(&self) -> Digest {
        let mut text = String::new();
        for e in &self.configured {
            text.push_str(&format!("cfg {} -> {} {}\n", e.dest, e.next_hop.cla, e.next_hop.address));
        }
        for (eid, hop) in &self.learned {
            text.push_str(&format!("learned {eid} -> {} {}\n", hop.cla, hop.address));
        }
        Digest::of(text.as_bytes())
    }
}
