//! Bundles, endpoint identifiers and BIBE PDUs, with their wire codecs.

mod bpdu;
pub(crate) mod cbor;
mod codec;
mod eid;

pub use bpdu::{decode_bpdu, encode_bpdu, BibePdu};
pub use codec::{
    decode_bundle, encode_bundle, Bundle, CrcType, CreationTimestamp, ProcessingFlags, BP_VERSION,
};
pub use eid::{parse_eid, EndpointId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BundleError {
    #[error("malformed EID: {0}")]
    MalformedEid(String),
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("malformed BPDU: {0}")]
    MalformedBpdu(String),
}
