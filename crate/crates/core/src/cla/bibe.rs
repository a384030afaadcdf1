//! BIBE-CLA: carries upper-scope bundles as BPDUs inside lower-scope bundles.
//!
//! The CLA is bound to one lower-scope instance and talks to it only as an
//! application agent. A next hop's address is the lower-scope EID of the
//! peer's BIBE registration.

use crate::audit::{Digest, EventKind, ScopeAudit};
use crate::bpa::AapMessage;
use crate::bundle::{
    decode_bpdu, decode_bundle, encode_bpdu, encode_bundle, parse_eid, BibePdu, Bundle, BundleError,
    CreationTimestamp, EndpointId,
};
use crate::time::DtnTime;

use super::{ClaAddress, ClaError};

/// Wraps `inner` into a lower-scope bundle. The outer lifetime never exceeds
/// what remains of the inner bundle's lifetime.
pub fn bibe_encapsulate(
    inner: &Bundle,
    outer_source: EndpointId,
    outer_destination: EndpointId,
    creation: CreationTimestamp,
    lifetime_ms: u64,
) -> Bundle {
    let remaining = inner.remaining_lifetime(creation.time);
    let payload = encode_bpdu(&BibePdu::new(encode_bundle(inner)));
    Bundle::new(outer_source, outer_destination, creation, lifetime_ms.min(remaining), payload)
}

/// Recovers the encapsulated bundle from an outer bundle's payload.
pub fn bibe_decapsulate(payload: &[u8]) -> Result<Bundle, BundleError> {
    let pdu = decode_bpdu(payload)?;
    decode_bundle(&pdu.encapsulated)
}

/// The upper-scope side of one BIBE attachment.
#[derive(Clone)]
pub struct BibeCla {
    pub name: String,
    /// AAP endpoint of the lower-scope instance.
    pub lower_aap: String,
    /// EID registered in the lower scope to receive encapsulated bundles.
    pub register: EndpointId,
    pub default_lifetime_ms: u64,
    audit: ScopeAudit,
}

impl BibeCla {
    /// `audit` must carry the upper scope's label: decapsulated bundles are
    /// parsed on the upper instance's behalf.
    pub fn new(
        name: impl Into<String>,
        lower_aap: impl Into<String>,
        register: EndpointId,
        default_lifetime_ms: u64,
        audit: ScopeAudit,
    ) -> Self {
        BibeCla {
            name: name.into(),
            lower_aap: lower_aap.into(),
            register,
            default_lifetime_ms,
            audit,
        }
    }

    pub fn registration(&self) -> AapMessage {
        AapMessage::Register { eid: self.register.to_string() }
    }

    /// Turns a forwarding decision into the SEND request for the lower
    /// instance.
    pub fn encapsulate(&self, next_hop: &ClaAddress, bundle: &Bundle, now: DtnTime) -> Result<AapMessage, ClaError> {
        if next_hop.cla != self.name {
            return Err(ClaError::PeerRejected(format!("{next_hop} is not served by CLA {}", self.name)));
        }
        let destination = parse_eid(&next_hop.address)
            .map_err(|e| ClaError::PeerRejected(format!("bad BIBE peer {}: {e}", next_hop.address)))?;
        let remaining = bundle.remaining_lifetime(now);
        if remaining == 0 {
            return Err(ClaError::PeerRejected("bundle lifetime elapsed".into()));
        }
        let inner = encode_bundle(bundle);
        self.audit.record(now, EventKind::Encapsulate, Digest::of(&inner), destination.to_string());
        Ok(AapMessage::Send {
            destination: destination.to_string(),
            lifetime_ms: self.default_lifetime_ms.min(remaining),
            payload: encode_bpdu(&BibePdu::new(inner)),
        })
    }

    /// Handles a RECV from the lower instance, returning the upper bundle.
    pub fn decapsulate(&self, payload: &[u8], now: DtnTime) -> Result<Bundle, BundleError> {
        let pdu = decode_bpdu(payload)?;
        let bundle = self.audit.decode(&pdu.encapsulated, now)?;
        self.audit.record(now, EventKind::Decapsulate, Digest::of(&pdu.encapsulated), self.name.clone());
        Ok(bundle)
    }
}
