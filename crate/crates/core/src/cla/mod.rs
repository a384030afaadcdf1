//! Convergence-layer adapters.
//!
//! Two kinds exist: the stream CLA moves length-prefixed bundle encodings
//! over a reliable byte stream between nodes, and the BIBE-CLA hands an
//! upper-scope bundle to a lower-scope instance as the payload of a new
//! bundle, speaking only the application agent protocol.

pub mod bibe;
pub mod stream;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::DtnTime;

pub use bibe::{bibe_decapsulate, bibe_encapsulate, BibeCla};
pub use stream::StreamCla;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaKind {
    Stream,
    Bibe,
}

impl fmt::Display for ClaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClaKind::Stream => "stream",
            ClaKind::Bibe => "bibe",
        })
    }
}

/// A next hop: the name of an attached CLA plus a CLA-specific address.
///
/// Stream CLA addresses are `host:port` (or an emulated link endpoint name);
/// BIBE addresses are the lower-scope EID the peer's BIBE-CLA registered.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClaAddress {
    pub cla: String,
    pub address: String,
}

impl ClaAddress {
    pub fn new(cla: impl Into<String>, address: impl Into<String>) -> Self {
        ClaAddress {
            cla: cla.into(),
            address: address.into(),
        }
    }
}

impl fmt::Display for ClaAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.cla, self.address)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClaError {
    #[error("link down")]
    LinkDown,
    #[error("peer rejected transfer: {0}")]
    PeerRejected(String),
}

/// A window during which a peer is reachable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub peer: ClaAddress,
    pub start: DtnTime,
    /// Exclusive end; `DtnTime(u64::MAX)` for an open-ended contact.
    pub end: DtnTime,
    /// Bytes per second, 0 for unlimited.
    pub rate: u64,
}

impl Contact {
    pub fn open_ended(peer: ClaAddress, start: DtnTime) -> Self {
        Contact {
            peer,
            start,
            end: DtnTime(u64::MAX),
            rate: 0,
        }
    }

    pub fn covers(&self, now: DtnTime) -> bool {
        self.start <= now && now < self.end
    }

    /// Milliseconds needed to push `len` bytes at this contact's rate.
    pub fn transfer_time_ms(&self, len: usize) -> u64 {
        if self.rate == 0 {
            0
        } else {
            (len as u64).saturating_mul(1000).div_ceil(self.rate)
        }
    }
}

/// The set of contacts a CLA may transmit on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContactPlan {
    contacts: Vec<Contact>,
}

impl ContactPlan {
    pub fn new(contacts: Vec<Contact>) -> Self {
        ContactPlan { contacts }
    }

    pub fn contacts(&self) -> &[Contact] {
        &self.contacts
    }

    pub fn add(&mut self, contact: Contact) {
        self.contacts.push(contact);
    }

    /// Removes every contact to `peer`; returns whether any existed.
    pub fn remove_peer(&mut self, peer: &ClaAddress) -> bool {
        let before = self.contacts.len();
        self.contacts.retain(|c| &c.peer != peer);
        before != self.contacts.len()
    }

    pub fn active(&self, peer: &ClaAddress, now: DtnTime) -> Option<&Contact> {
        self.contacts.iter().find(|c| &c.peer == peer && c.covers(now))
    }

    pub fn is_open(&self, peer: &ClaAddress, now: DtnTime) -> bool {
        self.active(peer, now).is_some()
    }

    /// Peers with an active contact at `now`.
    pub fn open_peers(&self, now: DtnTime) -> Vec<ClaAddress> {
        let mut peers: Vec<_> = self
            .contacts
            .iter()
            .filter(|c| c.covers(now))
            .map(|c| c.peer.clone())
            .collect();
        peers.sort();
        peers.dedup();
        peers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contact_window_is_half_open() {
        let c = Contact {
            peer: ClaAddress::new("tcp", "a:1"),
            start: DtnTime(10),
            end: DtnTime(20),
            rate: 1000,
        };
        assert!(!c.covers(DtnTime(9)));
        assert!(c.covers(DtnTime(10)));
        assert!(c.covers(DtnTime(19)));
        assert!(!c.covers(DtnTime(20)));
        assert_eq!(c.transfer_time_ms(1500), 1500);
        assert_eq!(c.transfer_time_ms(1), 1);
    }

    #[test]
    fn plan_lookup() {
        let peer = ClaAddress::new("tcp", "a:1");
        let mut plan = ContactPlan::default();
        assert!(!plan.is_open(&peer, DtnTime(0)));
        plan.add(Contact::open_ended(peer.clone(), DtnTime(5)));
        assert!(plan.is_open(&peer, DtnTime(5)));
        assert_eq!(plan.open_peers(DtnTime(6)), vec![peer.clone()]);
        assert!(plan.remove_peer(&peer));
        assert!(!plan.is_open(&peer, DtnTime(6)));
    }
}
