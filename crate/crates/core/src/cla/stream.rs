//! Stream CLA: each bundle travels as one length-prefixed frame.

use crate::bundle::{encode_bundle, Bundle};
use crate::framing;
use crate::time::DtnTime;

use super::{ClaAddress, ClaError, ContactPlan};

/// Segment size used when a frame is pushed through an emulated link.
pub const SEGMENT_LEN: usize = 64 * 1024;

/// The bytes to put on the wire plus how long the contact's rate cap keeps
/// the link busy sending them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub frame: Vec<u8>,
    pub duration_ms: u64,
}

/// Contact-gated stream CLA state for one instance.
#[derive(Debug, Clone)]
pub struct StreamCla {
    pub name: String,
    /// Local endpoint peers connect to.
    pub listen: String,
    pub contacts: ContactPlan,
}

impl StreamCla {
    pub fn new(name: impl Into<String>, listen: impl Into<String>, contacts: ContactPlan) -> Self {
        StreamCla {
            name: name.into(),
            listen: listen.into(),
            contacts,
        }
    }

    /// Frames `bundle` for `peer`, or fails with `LinkDown` when no contact
    /// covers `now`.
    pub fn transmit(&self, peer: &ClaAddress, bundle: &Bundle, now: DtnTime) -> Result<Transfer, ClaError> {
        if peer.cla != self.name {
            return Err(ClaError::PeerRejected(format!("{peer} is not served by CLA {}", self.name)));
        }
        let contact = self.contacts.active(peer, now).ok_or(ClaError::LinkDown)?;
        let frame = framing::frame(&encode_bundle(bundle));
        let duration_ms = contact.transfer_time_ms(frame.len());
        Ok(Transfer { frame, duration_ms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{decode_bundle, parse_eid, CreationTimestamp};
    use crate::cla::Contact;
    use crate::framing::FrameDecoder;

    fn bundle() -> Bundle {
        Bundle::new(
            parse_eid("dtn://a.s").unwrap(),
            parse_eid("dtn://b.s").unwrap(),
            CreationTimestamp { time: DtnTime(100), sequence: 1 },
            10_000,
            vec![0xAB; 200_000],
        )
    }

    #[test]
    fn transmit_within_contact_is_bit_exact() {
        let peer = ClaAddress::new("tcp", "b:4556");
        let cla = StreamCla::new(
            "tcp",
            "a:4556",
            ContactPlan::new(vec![Contact { peer: peer.clone(), start: DtnTime(0), end: DtnTime(1000), rate: 0 }]),
        );
        let b = bundle();
        let transfer = cla.transmit(&peer, &b, DtnTime(500)).unwrap();
        let mut dec = FrameDecoder::default();
        let mut frames = Vec::new();
        for seg in transfer.frame.chunks(SEGMENT_LEN) {
            frames.extend(dec.push(seg).unwrap());
        }
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0], encode_bundle(&b));
        assert_eq!(decode_bundle(&frames[0]).unwrap(), b);
    }

    #[test]
    fn transmit_outside_contact_is_link_down() {
        let peer = ClaAddress::new("tcp", "b:4556");
        let cla = StreamCla::new(
            "tcp",
            "a:4556",
            ContactPlan::new(vec![Contact { peer: peer.clone(), start: DtnTime(0), end: DtnTime(1000), rate: 0 }]),
        );
        assert_eq!(cla.transmit(&peer, &bundle(), DtnTime(1000)), Err(ClaError::LinkDown));
        let other = ClaAddress::new("tcp", "c:4556");
        assert_eq!(cla.transmit(&other, &bundle(), DtnTime(10)), Err(ClaError::LinkDown));
    }

    #[test]
    fn rate_cap_sets_duration() {
        let peer = ClaAddress::new("tcp", "b:4556");
        let cla = StreamCla::new(
            "tcp",
            "a",
            ContactPlan::new(vec![Contact { peer: peer.clone(), start: DtnTime(0), end: DtnTime(u64::MAX), rate: 100_000 }]),
        );
        let t = cla.transmit(&peer, &bundle(), DtnTime(0)).unwrap();
        assert_eq!(t.duration_ms, (t.frame.len() as u64 * 1000).div_ceil(100_000));
    }
}
