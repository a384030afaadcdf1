//! Application agent protocol.
//!
//! Applications and upper-layer BIBE-CLAs talk to an instance through the
//! same messages. Each message is one length-prefixed frame (see
//! [`crate::framing`]) whose body is a one-byte type tag followed by fields:
//!
//! | tag  | message    | fields                                             |
//! |------|------------|----------------------------------------------------|
//! | 0x01 | WELCOME    | node EID: str                                      |
//! | 0x02 | REGISTER   | EID: str                                           |
//! | 0x03 | DEREGISTER | EID: str                                           |
//! | 0x04 | SEND       | destination: str, lifetime ms: u64, payload: bytes |
//! | 0x05 | RECV       | source: str, payload: bytes                        |
//! | 0x06 | ACK        |                                                    |
//! | 0x07 | NACK       | reason: str                                        |
//!
//! `str` is a u16 big-endian length plus UTF-8, `bytes` a u32 big-endian
//! length plus data, `u64` eight big-endian bytes. A SEND lifetime of 0
//! selects the instance default.

use std::io::{self, Read, Write};

use crate::framing;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AapMessage {
    Welcome { node_eid: String },
    Register { eid: String },
    Deregister { eid: String },
    Send { destination: String, lifetime_ms: u64, payload: Vec<u8> },
    Recv { source: String, payload: Vec<u8> },
    Ack,
    Nack { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed AAP message: {0}")]
pub struct AapDecodeError(pub String);

const WELCOME: u8 = 0x01;
const REGISTER: u8 = 0x02;
const DEREGISTER: u8 = 0x03;
const SEND: u8 = 0x04;
const RECV: u8 = 0x05;
const ACK: u8 = 0x06;
const NACK: u8 = 0x07;

fn put_str(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("AAP string longer than 65535 bytes");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

struct Cursor<'a> {
    data: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AapDecodeError> {
        if self.data.len() < n {
            return Err(AapDecodeError("truncated".into()));
        }
        let (head, rest) = self.data.split_at(n);
        self.data = rest;
        Ok(head)
    }

    fn str(&mut self) -> Result<String, AapDecodeError> {
        let len = self.take(2)?;
        let len = u16::from_be_bytes([len[0], len[1]]) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| AapDecodeError("invalid UTF-8".into()))
    }

    fn bytes(&mut self) -> Result<Vec<u8>, AapDecodeError> {
        let len = self.take(4)?;
        let len = u32::from_be_bytes([len[0], len[1], len[2], len[3]]) as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn u64(&mut self) -> Result<u64, AapDecodeError> {
        let b = self.take(8)?;
        let mut buf = [0u8; 8];
        buf.copy_from_slice(b);
        Ok(u64::from_be_bytes(buf))
    }

    fn end(&self) -> Result<(), AapDecodeError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(AapDecodeError("trailing bytes".into()))
        }
    }
}

impl AapMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            AapMessage::Welcome { node_eid } => {
                out.push(WELCOME);
                put_str(&mut out, node_eid);
            }
            AapMessage::Register { eid } => {
                out.push(REGISTER);
                put_str(&mut out, eid);
            }
            AapMessage::Deregister { eid } => {
                out.push(DEREGISTER);
                put_str(&mut out, eid);
            }
            AapMessage::Send { destination, lifetime_ms, payload } => {
                out.push(SEND);
                put_str(&mut out, destination);
                out.extend_from_slice(&lifetime_ms.to_be_bytes());
                put_bytes(&mut out, payload);
            }
            AapMessage::Recv { source, payload } => {
                out.push(RECV);
                put_str(&mut out, source);
                put_bytes(&mut out, payload);
            }
            AapMessage::Ack => out.push(ACK),
            AapMessage::Nack { reason } => {
                out.push(NACK);
                put_str(&mut out, reason);
            }
        }
        out
    }

    pub fn decode(body: &[u8]) -> Result<Self, AapDecodeError> {
        let (&tag, rest) = body
            .split_first()
            .ok_or_else(|| AapDecodeError("empty message".into()))?;
        let mut c = Cursor { data: rest };
        let msg = match tag {
            WELCOME => AapMessage::Welcome { node_eid: c.str()? },
            REGISTER => AapMessage::Register { eid: c.str()? },
            DEREGISTER => AapMessage::Deregister { eid: c.str()? },
            SEND => AapMessage::Send {
                destination: c.str()?,
                lifetime_ms: c.u64()?,
                payload: c.bytes()?,
            },
            RECV => AapMessage::Recv { source: c.str()?, payload: c.bytes()? },
            ACK => AapMessage::Ack,
            NACK => AapMessage::Nack { reason: c.str()? },
            other => return Err(AapDecodeError(format!("unknown message type {other:#04x}"))),
        };
        c.end()?;
        Ok(msg)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        framing::write_frame(w, &self.encode())
    }

    /// Reads one message; `Ok(None)` on clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Option<Self>> {
        match framing::read_frame(r)? {
            None => Ok(None),
            Some(body) => AapMessage::decode(&body)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_layout() {
        let msg = AapMessage::Send {
            destination: "ipn:2.0".into(),
            lifetime_ms: 5,
            payload: b"hi".to_vec(),
        };
        assert_eq!(
            hex::encode(msg.encode()),
            "04000769706e3a322e300000000000000005000000026869"
        );
        assert_eq!(AapMessage::Ack.encode(), vec![0x06]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(AapMessage::decode(&[]).is_err());
        assert!(AapMessage::decode(&[0x99]).is_err());
        assert!(AapMessage::decode(&[ACK, 0]).is_err());
        assert!(AapMessage::decode(&[REGISTER, 0, 5, b'a']).is_err());
    }

    fn any_message() -> impl Strategy<Value = AapMessage> {
        prop_oneof![
            ".{0,40}".prop_map(|node_eid| AapMessage::Welcome { node_eid }),
            ".{0,40}".prop_map(|eid| AapMessage::Register { eid }),
            ".{0,40}".prop_map(|eid| AapMessage::Deregister { eid }),
            (".{0,40}", any::<u64>(), prop::collection::vec(any::<u8>(), 0..256)).prop_map(
                |(destination, lifetime_ms, payload)| AapMessage::Send { destination, lifetime_ms, payload }
            ),
            (".{0,40}", prop::collection::vec(any::<u8>(), 0..256))
                .prop_map(|(source, payload)| AapMessage::Recv { source, payload }),
            Just(AapMessage::Ack),
            ".{0,40}".prop_map(|reason| AapMessage::Nack { reason }),
        ]
    }

    proptest! {
        #[test]
        fn framed_round_trip(msg in any_message()) {
            let mut wire = Vec::new();
            msg.write_to(&mut wire).unwrap();
            let mut cursor = io::Cursor::new(wire);
            prop_assert_eq!(AapMessage::read_from(&mut cursor).unwrap(), Some(msg));
        }

        #[test]
        fn decode_never_panics(body in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = AapMessage::decode(&body);
        }
    }
}
