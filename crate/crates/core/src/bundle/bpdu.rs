//! The BIBE protocol data unit.
//!
//! Encoded as the 3-element array `[transmission-id, retransmission-time,
//! encapsulated-bundle]` and carried directly as the payload of an outer
//! bundle. The outer bundle is not an administrative record.

use super::cbor::{self, Reader};
use super::BundleError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BibePdu {
    /// 0 when no custody transfer is requested.
    pub transmission_id: u64,
    /// 0 when no retransmission is scheduled.
    pub retransmission_time: u64,
    /// A complete bundle encoding, opaque at this layer.
    pub encapsulated: Vec<u8>,
}

impl BibePdu {
    /// A BPDU without custody: both control fields are zero.
    pub fn new(encapsulated: Vec<u8>) -> Self {
        BibePdu {
            transmission_id: 0,
            retransmission_time: 0,
            encapsulated,
        }
    }
}

pub fn encode_bpdu(p: &BibePdu) -> Vec<u8> {
    let mut out = Vec::with_capacity(p.encapsulated.len() + 16);
    cbor::write_array(&mut out, 3);
    cbor::write_uint(&mut out, p.transmission_id);
    cbor::write_uint(&mut out, p.retransmission_time);
    cbor::write_bytes(&mut out, &p.encapsulated);
    out
}

pub fn decode_bpdu(bytes: &[u8]) -> Result<BibePdu, BundleError> {
    let err = |e: cbor::CborError| BundleError::MalformedBpdu(e.to_string());
    let mut r = Reader::new(bytes);
    if r.array().map_err(err)? != 3 {
        return Err(BundleError::MalformedBpdu("expected a 3-element array".into()));
    }
    let transmission_id = r.uint().map_err(err)?;
    let retransmission_time = r.uint().map_err(err)?;
    let encapsulated = r.bytes().map_err(err)?.to_vec();
    r.finish().map_err(err)?;
    Ok(BibePdu {
        transmission_id,
        retransmission_time,
        encapsulated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{decode_bundle, encode_bundle};

    fn vector(name: &str) -> Vec<u8> {
        let path = format!("{}/vectors/{name}.hex", env!("CARGO_MANIFEST_DIR"));
        hex::decode(std::fs::read_to_string(path).unwrap().trim()).unwrap()
    }

    #[test]
    fn fig1_inner_bytes_preserved() {
        let inner = vector("bundle_ipn_cmd_crc32c");
        let encoded = encode_bpdu(&BibePdu::new(inner.clone()));
        assert_eq!(encoded, vector("bpdu_fig1"));
        let decoded = decode_bpdu(&encoded).unwrap();
        assert_eq!(decoded.encapsulated, inner);
        assert_eq!(decoded.transmission_id, 0);
        assert_eq!(decoded.retransmission_time, 0);
        assert_eq!(encode_bundle(&decode_bundle(&decoded.encapsulated).unwrap()), inner);
    }

    #[test]
    fn empty_inner_round_trips_then_fails_as_bundle() {
        let p = BibePdu::new(Vec::new());
        let decoded = decode_bpdu(&encode_bpdu(&p)).unwrap();
        assert_eq!(decoded, p);
        assert!(matches!(
            decode_bundle(&decoded.encapsulated),
            Err(BundleError::MalformedBundle(_))
        ));
    }

    #[test]
    fn rejects_malformed() {
        for bad in [&[][..], &[0x82, 0, 0], &[0x83, 0, 0, 0x41], &[0x83, 0, 0, 0x40, 0x00]] {
            assert!(matches!(decode_bpdu(bad), Err(BundleError::MalformedBpdu(_))));
        }
    }
}
