//! BPv7 bundle model and its canonical CBOR encoding.
//!
//! A bundle is an indefinite-length array holding the primary block and a
//! single payload block. Both blocks carry the same CRC type; the CRC is
//! computed over the block's encoding with the CRC value bytes zeroed and
//! stored big-endian.

use crc::{Crc, CRC_16_IBM_SDLC, CRC_32_ISCSI};
use serde::{Deserialize, Serialize};

use super::cbor::{self, CborError, Reader};
use super::eid::EndpointId;
use super::BundleError;
use crate::time::DtnTime;

pub const BP_VERSION: u64 = 7;
const PAYLOAD_BLOCK_TYPE: u64 = 1;
const PAYLOAD_BLOCK_NUMBER: u64 = 1;

const CRC16_X25: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_SDLC);
const CRC32C: Crc<u32> = Crc::<u32>::new(&CRC_32_ISCSI);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrcType {
    None,
    Crc16,
    #[default]
    Crc32c,
}

impl CrcType {
    fn code(self) -> u64 {
        match self {
            CrcType::None => 0,
            CrcType::Crc16 => 1,
            CrcType::Crc32c => 2,
        }
    }

    fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(CrcType::None),
            1 => Some(CrcType::Crc16),
            2 => Some(CrcType::Crc32c),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            CrcType::None => 0,
            CrcType::Crc16 => 2,
            CrcType::Crc32c => 4,
        }
    }

    fn checksum(self, data: &[u8]) -> Vec<u8> {
        match self {
            CrcType::None => Vec::new(),
            CrcType::Crc16 => CRC16_X25.checksum(data).to_be_bytes().to_vec(),
            CrcType::Crc32c => CRC32C.checksum(data).to_be_bytes().to_vec(),
        }
    }
}

/// Bundle processing control flags.
///
/// The "is a fragment" bit is not representable: fragmentation is not
/// supported by this codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ProcessingFlags(u64);

impl ProcessingFlags {
    pub const IS_FRAGMENT: u64 = 0x0001;
    pub const ADMIN_RECORD: u64 = 0x0002;
    pub const MUST_NOT_FRAGMENT: u64 = 0x0004;
    pub const ACK_REQUESTED: u64 = 0x0020;
    pub const STATUS_TIME_REQUESTED: u64 = 0x0040;

    pub const fn empty() -> Self {
        ProcessingFlags(0)
    }

    pub fn from_bits(bits: u64) -> Option<Self> {
        (bits & Self::IS_FRAGMENT == 0).then_some(ProcessingFlags(bits))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, bit: u64) -> bool {
        self.0 & bit == bit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CreationTimestamp {
    pub time: DtnTime,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bundle {
    pub flags: ProcessingFlags,
    pub destination: EndpointId,
    pub source: EndpointId,
    pub report_to: EndpointId,
    pub creation: CreationTimestamp,
    pub lifetime_ms: u64,
    pub payload: Vec<u8>,
    pub crc: CrcType,
}

impl Bundle {
    /// A bundle with no flags, `dtn:none` as report-to and CRC-32C blocks.
    pub fn new(
        source: EndpointId,
        destination: EndpointId,
        creation: CreationTimestamp,
        lifetime_ms: u64,
        payload: Vec<u8>,
    ) -> Self {
        Bundle {
            flags: ProcessingFlags::empty(),
            destination,
            source,
            report_to: EndpointId::Null,
            creation,
            lifetime_ms,
            payload,
            crc: CrcType::Crc32c,
        }
    }

    pub fn expires_at(&self) -> DtnTime {
        self.creation.time.saturating_add(self.lifetime_ms)
    }

    /// True once the lifetime has fully elapsed at `now`.
    pub fn is_expired(&self, now: DtnTime) -> bool {
        now > self.expires_at()
    }

    pub fn remaining_lifetime(&self, now: DtnTime) -> u64 {
        self.expires_at().saturating_sub(now)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_bundle(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Bundle, BundleError> {
        decode_bundle(bytes)
    }
}

fn write_eid(out: &mut Vec<u8>, eid: &EndpointId) {
    cbor::write_array(out, 2);
    match eid {
        EndpointId::Null => {
            cbor::write_uint(out, 1);
            cbor::write_uint(out, 0);
        }
        EndpointId::Dtn(path) => {
            cbor::write_uint(out, 1);
            cbor::write_text(out, path);
        }
        EndpointId::Ipn { node, service } => {
            cbor::write_uint(out, 2);
            cbor::write_array(out, 2);
            cbor::write_uint(out, *node);
            cbor::write_uint(out, *service);
        }
    }
}

/// Appends the CRC field to a block whose other fields are already in
/// `out[start..]`.
fn seal_block(out: &mut Vec<u8>, start: usize, crc: CrcType) {
    if crc == CrcType::None {
        return;
    }
    cbor::write_bytes(out, &vec![0u8; crc.width()]);
    let value = crc.checksum(&out[start..]);
    let len = out.len();
    out[len - crc.width()..].copy_from_slice(&value);
}

/// Canonical encoding: identical bundles always produce identical bytes.
pub fn encode_bundle(b: &Bundle) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + b.payload.len());
    out.push(cbor::INDEFINITE_ARRAY);

    let start = out.len();
    let crc_field = u64::from(b.crc != CrcType::None);
    cbor::write_array(&mut out, 8 + crc_field);
    cbor::write_uint(&mut out, BP_VERSION);
    cbor::write_uint(&mut out, b.flags.bits());
    cbor::write_uint(&mut out, b.crc.code());
    write_eid(&mut out, &b.destination);
    write_eid(&mut out, &b.source);
    write_eid(&mut out, &b.report_to);
    cbor::write_array(&mut out, 2);
    cbor::write_uint(&mut out, b.creation.time.as_millis());
    cbor::write_uint(&mut out, b.creation.sequence);
    cbor::write_uint(&mut out, b.lifetime_ms);
    seal_block(&mut out, start, b.crc);

    let start = out.len();
    cbor::write_array(&mut out, 5 + crc_field);
    cbor::write_uint(&mut out, PAYLOAD_BLOCK_TYPE);
    cbor::write_uint(&mut out, PAYLOAD_BLOCK_NUMBER);
    cbor::write_uint(&mut out, 0);
    cbor::write_uint(&mut out, b.crc.code());
    cbor::write_bytes(&mut out, &b.payload);
    seal_block(&mut out, start, b.crc);

    out.push(cbor::BREAK);
    out
}

fn malformed(what: impl std::fmt::Display) -> BundleError {
    BundleError::MalformedBundle(what.to_string())
}

fn cbor_err(context: &'static str) -> impl Fn(CborError) -> BundleError {
    move |e| malformed(format!("{context}: {e}"))
}

fn read_eid(r: &mut Reader<'_>, field: &'static str) -> Result<EndpointId, BundleError> {
    let err = cbor_err(field);
    if r.array().map_err(&err)? != 2 {
        return Err(malformed(format!("{field}: EID must be a 2-element array")));
    }
    match r.uint().map_err(&err)? {
        1 if r.is_uint() => match r.uint().map_err(&err)? {
            0 => Ok(EndpointId::Null),
            other => Err(malformed(format!("{field}: invalid dtn SSP integer {other}"))),
        },
        1 => {
            let path = r.text().map_err(&err)?;
            EndpointId::dtn(path).map_err(|e| malformed(format!("{field}: {e}")))
        }
        2 => {
            if r.array().map_err(&err)? != 2 {
                return Err(malformed(format!("{field}: ipn SSP must be [node, service]")));
            }
            let node = r.uint().map_err(&err)?;
            let service = r.uint().map_err(&err)?;
            Ok(EndpointId::Ipn { node, service })
        }
        scheme => Err(malformed(format!("{field}: unknown URI scheme code {scheme}"))),
    }
}

fn check_crc(r: &mut Reader<'_>, start: usize, crc: CrcType, block: &'static str) -> Result<(), BundleError> {
    if crc == CrcType::None {
        return Ok(());
    }
    let value = r.bytes().map_err(cbor_err(block))?;
    if value.len() != crc.width() {
        return Err(malformed(format!("{block}: CRC field has {} bytes", value.len())));
    }
    let mut zeroed = r.consumed(start).to_vec();
    let n = zeroed.len();
    zeroed[n - crc.width()..].fill(0);
    if crc.checksum(&zeroed) != value {
        return Err(malformed(format!("{block}: CRC mismatch")));
    }
    Ok(())
}

/// Decodes a canonical bundle encoding.
///
/// Only the encoding produced by [`encode_bundle`] is accepted, so a
/// successful decode always re-encodes to the input bytes.
pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle, BundleError> {
    let mut r = Reader::new(bytes);
    r.expect_byte(cbor::INDEFINITE_ARRAY, "indefinite-length bundle array")
        .map_err(cbor_err("bundle"))?;

    let err = cbor_err("primary block");
    let start = r.position();
    let fields = r.array().map_err(&err)?;
    let version = r.uint().map_err(&err)?;
    if version != BP_VERSION {
        return Err(malformed(format!("unsupported bundle protocol version {version}")));
    }
    let flags = r.uint().map_err(&err)?;
    let flags = ProcessingFlags::from_bits(flags)
        .ok_or_else(|| malformed("fragmented bundles are not supported"))?;
    let crc = r.uint().map_err(&err)?;
    let crc = CrcType::from_code(crc).ok_or_else(|| malformed(format!("unknown CRC type {crc}")))?;
    let expected_fields = 8 + u64::from(crc != CrcType::None);
    if fields != expected_fields {
        return Err(malformed(format!(
            "primary block has {fields} fields, expected {expected_fields}"
        )));
    }
    let destination = read_eid(&mut r, "destination")?;
    let source = read_eid(&mut r, "source")?;
    let report_to = read_eid(&mut r, "report-to")?;
    if r.array().map_err(&err)? != 2 {
        return Err(malformed("creation timestamp must be a 2-element array"));
    }
    let creation = CreationTimestamp {
        time: DtnTime(r.uint().map_err(&err)?),
        sequence: r.uint().map_err(&err)?,
    };
    let lifetime_ms = r.uint().map_err(&err)?;
    check_crc(&mut r, start, crc, "primary block")?;

    let err = cbor_err("payload block");
    let start = r.position();
    let fields = r.array().map_err(&err)?;
    let expected_fields = 5 + u64::from(crc != CrcType::None);
    if fields != expected_fields {
        return Err(malformed(format!(
            "payload block has {fields} fields, expected {expected_fields}"
        )));
    }
    let block_type = r.uint().map_err(&err)?;
    if block_type != PAYLOAD_BLOCK_TYPE {
        return Err(malformed(format!("unsupported block type {block_type}")));
    }
    if r.uint().map_err(&err)? != PAYLOAD_BLOCK_NUMBER {
        return Err(malformed("payload block number must be 1"));
    }
    if r.uint().map_err(&err)? != 0 {
        return Err(malformed("block processing flags are not supported"));
    }
    if r.uint().map_err(&err)? != crc.code() {
        return Err(malformed("payload block CRC type differs from primary block"));
    }
    let payload = r.bytes().map_err(&err)?.to_vec();
    check_crc(&mut r, start, crc, "payload block")?;

    r.expect_byte(cbor::BREAK, "break after payload block")
        .map_err(cbor_err("bundle"))?;
    r.finish().map_err(cbor_err("bundle"))?;

    Ok(Bundle {
        flags,
        destination,
        source,
        report_to,
        creation,
        lifetime_ms,
        payload,
        crc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::parse_eid;

    fn vector(name: &str) -> Vec<u8> {
        let path = format!("{}/vectors/{name}.hex", env!("CARGO_MANIFEST_DIR"));
        hex::decode(std::fs::read_to_string(path).unwrap().trim()).unwrap()
    }

    pub(crate) fn cmd_bundle() -> Bundle {
        Bundle::new(
            parse_eid("ipn:1.0").unwrap(),
            parse_eid("ipn:2.0").unwrap(),
            CreationTimestamp { time: DtnTime(750_000_000_000), sequence: 0 },
            86_400_000,
            b"cmd".to_vec(),
        )
    }

    #[test]
    fn matches_reference_encoding_crc32c() {
        assert_eq!(encode_bundle(&cmd_bundle()), vector("bundle_ipn_cmd_crc32c"));
    }

    #[test]
    fn matches_reference_encoding_crc16() {
        let b = Bundle {
            flags: ProcessingFlags::from_bits(ProcessingFlags::MUST_NOT_FRAGMENT).unwrap(),
            destination: parse_eid("dtn://lower3.dtn").unwrap(),
            source: parse_eid("dtn://lower1.dtn").unwrap(),
            report_to: parse_eid("dtn://lower1.dtn").unwrap(),
            creation: CreationTimestamp { time: DtnTime(750_000_000_123), sequence: 7 },
            lifetime_ms: 3_600_000,
            payload: (0u8..16).collect(),
            crc: CrcType::Crc16,
        };
        let bytes = vector("bundle_dtn_crc16");
        assert_eq!(encode_bundle(&b), bytes);
        assert_eq!(decode_bundle(&bytes).unwrap(), b);
    }

    #[test]
    fn empty_payload_without_crc() {
        let mut b = Bundle::new(
            parse_eid("ipn:1.0").unwrap(),
            parse_eid("ipn:2.1").unwrap(),
            CreationTimestamp { time: DtnTime(1), sequence: 0 },
            1000,
            Vec::new(),
        );
        b.report_to = parse_eid("ipn:1.0").unwrap();
        b.crc = CrcType::None;
        let bytes = vector("bundle_empty_nocrc");
        assert_eq!(encode_bundle(&b), bytes);
        assert_eq!(decode_bundle(&bytes).unwrap(), b);
    }

    #[test]
    fn truncation_fails() {
        let bytes = encode_bundle(&cmd_bundle());
        for cut in 0..bytes.len() {
            assert!(matches!(
                decode_bundle(&bytes[..cut]),
                Err(BundleError::MalformedBundle(_))
            ));
        }
    }

    #[test]
    fn crc_mismatch_detected() {
        let mut bytes = encode_bundle(&cmd_bundle());
        // last payload byte 'd'
        let pos = bytes.iter().rposition(|&b| b == b'd').unwrap();
        bytes[pos] = b'x';
        let err = decode_bundle(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC mismatch"), "{err}");
    }

    #[test]
    fn rejects_wrong_version_and_fragments() {
        let mut bytes = encode_bundle(&cmd_bundle());
        bytes[2] = 6;
        assert!(decode_bundle(&bytes).unwrap_err().to_string().contains("version"));
        let mut bytes = encode_bundle(&cmd_bundle());
        bytes[3] = 1;
        assert!(decode_bundle(&bytes).is_err());
        assert!(ProcessingFlags::from_bits(1).is_none());
    }

    #[test]
    fn expiry() {
        let b = cmd_bundle();
        let deadline = DtnTime(750_000_000_000 + 86_400_000);
        assert!(!b.is_expired(deadline));
        assert!(b.is_expired(deadline.saturating_add(1)));
        assert_eq!(b.remaining_lifetime(DtnTime(750_000_000_000)), 86_400_000);
        assert_eq!(b.remaining_lifetime(deadline.saturating_add(5)), 0);
    }
}
