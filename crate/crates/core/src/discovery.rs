//! Beacon-based neighbor discovery.
//!
//! A discovery agent emits periodic beacons advertising one stream CLA
//! address. Hearing a neighbor's beacon yields an open-ended contact and an
//! exact route to the neighbor's EID; silence for [`EXPIRY_PERIODS`] beacon
//! periods withdraws both again.
//!
//! Beacon datagram layout (canonical CBOR map, keys in ascending order):
//!
//! | key | value                         |
//! |-----|-------------------------------|
//! | 0   | uint, format version (1)      |
//! | 1   | tstr, source node EID         |
//! | 2   | tstr, advertised CLA name     |
//! | 3   | tstr, advertised CLA address  |
//! | 4   | uint, beacon period in ms     |
//! | 5   | uint, sequence number         |

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpa::{DispatchOutcome, ScopeInstance};
use crate::bundle::cbor::{self, CborError, Reader};
use crate::bundle::{parse_eid, EndpointId};
use crate::cla::ClaAddress;
use crate::time::DtnTime;

pub const BEACON_VERSION: u64 = 1;
/// Missed periods after which a neighbor is dropped.
pub const EXPIRY_PERIODS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed beacon: {0}")]
pub struct BeaconError(String);

impl From<CborError> for BeaconError {
    fn from(e: CborError) -> Self {
        BeaconError(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_period")]
    pub period_ms: u64,
    /// Broadcast channel name (emulation) or UDP address (daemon).
    #[serde(default = "default_channel")]
    pub channel: String,
    /// Stream CLA advertised in beacons.
    pub cla: String,
    /// Daemon only: local UDP address beacons are received on.
    #[serde(default)]
    pub listen: Option<String>,
    /// Daemon only: UDP destinations (unicast or broadcast) for beacons.
    #[serde(default)]
    pub targets: Vec<String>,
}

fn default_period() -> u64 {
    1000
}

fn default_channel() -> String {
    "ipnd".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Beacon {
    pub source: EndpointId,
    pub cla: String,
    pub address: String,
    pub period_ms: u64,
    pub sequence: u64,
}

impl Beacon {
    pub fn advertised(&self) -> ClaAddress {
        ClaAddress::new(self.cla.clone(), self.address.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        cbor::write_map(&mut out, 6);
        cbor::write_uint(&mut out, 0);
        cbor::write_uint(&mut out, BEACON_VERSION);
        cbor::write_uint(&mut out, 1);
        cbor::write_text(&mut out, &self.source.to_string());
        cbor::write_uint(&mut out, 2);
        cbor::write_text(&mut out, &self.cla);
        cbor::write_uint(&mut out, 3);
        cbor::write_text(&mut out, &self.address);
        cbor::write_uint(&mut out, 4);
        cbor::write_uint(&mut out, self.period_ms);
        cbor::write_uint(&mut out, 5);
        cbor::write_uint(&mut out, self.sequence);
        out
    }

    pub fn decode(data: &[u8]) -> Result<Beacon, BeaconError> {
        let mut r = Reader::new(data);
        if r.map()? != 6 {
            return Err(BeaconError("expected 6 entries".into()));
        }
        let key = |r: &mut Reader<'_>, want: u64| -> Result<(), BeaconError> {
            let got = r.uint()?;
            if got != want {
                return Err(BeaconError(format!("expected key {want}, found {got}")));
            }
            Ok(())
        };
        key(&mut r, 0)?;
        let version = r.uint()?;
        if version != BEACON_VERSION {
            return Err(BeaconError(format!("unsupported version {version}")));
        }
        key(&mut r, 1)?;
        let source = parse_eid(r.text()?).map_err(|e| BeaconError(e.to_string()))?;
        key(&mut r, 2)?;
        let cla = r.text()?.to_string();
        key(&mut r, 3)?;
        let address = r.text()?.to_string();
        key(&mut r, 4)?;
        let period_ms = r.uint()?;
        key(&mut r, 5)?;
        let sequence = r.uint()?;
        r.finish()?;
        if period_ms == 0 {
            return Err(BeaconError("zero period".into()));
        }
        Ok(Beacon { source, cla, address, period_ms, sequence })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiscoveryEvent {
    ContactUp { peer: ClaAddress },
    Learn { eid: EndpointId, hop: ClaAddress },
    Forget { eid: EndpointId },
    ContactDown { peer: ClaAddress },
}

#[derive(Debug, Clone)]
struct Neighbor {
    hop: ClaAddress,
    last_sequence: u64,
    last_heard: DtnTime,
    period_ms: u64,
}

pub struct DiscoveryAgent {
    own: EndpointId,
    advertise: ClaAddress,
    period_ms: u64,
    next_sequence: u64,
    rng: ChaCha8Rng,
    neighbors: BTreeMap<EndpointId, Neighbor>,
}

impl DiscoveryAgent {
    pub fn new(own: EndpointId, advertise: ClaAddress, period_ms: u64, seed: u64) -> Self {
        DiscoveryAgent {
            own,
            advertise,
            period_ms: period_ms.max(1),
            next_sequence: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            neighbors: BTreeMap::new(),
        }
    }

    pub fn period_ms(&self) -> u64 {
        self.period_ms
    }

    /// Delay until the next beacon: one period with up to 10% jitter either way.
    pub fn next_emit_delay(&mut self) -> u64 {
        let spread = self.period_ms / 10;
        if spread == 0 {
            return self.period_ms;
        }
        self.period_ms - spread + self.rng.gen_range(0..=2 * spread)
    }

    pub fn make_beacon(&mut self) -> Beacon {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        Beacon {
            source: self.own.clone(),
            cla: self.advertise.cla.clone(),
            address: self.advertise.address.clone(),
            period_ms: self.period_ms,
            sequence,
        }
    }

    pub fn neighbors(&self) -> impl Iterator<Item = (&EndpointId, &ClaAddress)> {
        self.neighbors.iter().map(|(eid, n)| (eid, &n.hop))
    }

    pub fn handle_beacon(&mut self, beacon: &Beacon, now: DtnTime) -> Vec<DiscoveryEvent> {
        if beacon.source == self.own {
            return Vec::new();
        }
        let hop = beacon.advertised();
        match self.neighbors.get_mut(&beacon.source) {
            Some(n) if beacon.sequence <= n.last_sequence => Vec::new(),
            Some(n) if n.hop == hop => {
                n.last_sequence = beacon.sequence;
                n.last_heard = now;
                n.period_ms = beacon.period_ms;
                Vec::new()
            }
            existing => {
                let mut events = Vec::new();
                if let Some(n) = existing {
                    events.push(DiscoveryEvent::ContactDown { peer: n.hop.clone() });
                }
                self.neighbors.insert(
                    beacon.source.clone(),
                    Neighbor { hop: hop.clone(), last_sequence: beacon.sequence, last_heard: now, period_ms: beacon.period_ms },
                );
                events.push(DiscoveryEvent::ContactUp { peer: hop.clone() });
                events.push(DiscoveryEvent::Learn { eid: beacon.source.clone(), hop });
                events
            }
        }
    }

    /// Drops neighbors not heard from for [`EXPIRY_PERIODS`] of their period.
    pub fn expire(&mut self, now: DtnTime) -> Vec<DiscoveryEvent> {
        let mut events = Vec::new();
        self.neighbors.retain(|eid, n| {
            let alive = now.saturating_sub(n.last_heard) <= EXPIRY_PERIODS * n.period_ms;
            if !alive {
                events.push(DiscoveryEvent::Forget { eid: eid.clone() });
                events.push(DiscoveryEvent::ContactDown { peer: n.hop.clone() });
            }
            alive
        });
        events
    }
}

/// Applies discovery events to the owning instance. Contact changes must
/// also reach the CLA; that part is left to the driver.
pub fn apply_to_instance(instance: &mut ScopeInstance, events: &[DiscoveryEvent], now: DtnTime) -> Vec<DispatchOutcome> {
    let mut outcomes = Vec::new();
    for event in events {
        match event {
            DiscoveryEvent::ContactUp { peer } => outcomes.extend(instance.contact_started(peer.clone(), now)),
            DiscoveryEvent::ContactDown { peer } => instance.contact_ended(peer),
            DiscoveryEvent::Learn { eid, hop } => match instance.learn_route(eid.clone(), hop.clone(), now) {
                Ok(o) => outcomes.extend(o),
                Err(e) => log::warn!("{}: ignoring beacon route: {e}", instance.scope()),
            },
            DiscoveryEvent::Forget { eid } => instance.forget_route(eid, now),
        }
    }
    outcomes
}
