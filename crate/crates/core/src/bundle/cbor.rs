//! The CBOR subset used by the bundle, BPDU and beacon encodings.
//!
//! Only shortest-form heads are produced, and the reader rejects anything
//! else, so every accepted input has exactly one encoding.

use std::fmt;

const MAJOR_UINT: u8 = 0;
const MAJOR_BYTES: u8 = 2;
const MAJOR_TEXT: u8 = 3;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;

pub(crate) const INDEFINITE_ARRAY: u8 = 0x9f;
pub(crate) const BREAK: u8 = 0xff;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum CborError {
    Truncated,
    UnexpectedType { expected: &'static str, found: u8 },
    NonCanonical,
    Length,
    Utf8,
    Trailing,
}

impl fmt::Display for CborError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CborError::Truncated => f.write_str("truncated input"),
            CborError::UnexpectedType { expected, found } => {
                write!(f, "expected {expected}, found initial byte {found:#04x}")
            }
            CborError::NonCanonical => f.write_str("non-shortest integer head"),
            CborError::Length => f.write_str("length out of range"),
            CborError::Utf8 => f.write_str("invalid UTF-8 in text string"),
            CborError::Trailing => f.write_str("trailing bytes"),
        }
    }
}

fn write_head(out: &mut Vec<u8>, major: u8, value: u64) {
    let m = major << 5;
    if value < 24 {
        out.push(m | value as u8);
    } else if value <= u8::MAX as u64 {
        out.push(m | 24);
        out.push(value as u8);
    } else if value <= u16::MAX as u64 {
        out.push(m | 25);
        out.extend_from_slice(&(value as u16).to_be_bytes());
    } else if value <= u32::MAX as u64 {
        out.push(m | 26);
        out.extend_from_slice(&(value as u32).to_be_bytes());
    } else {
        out.push(m | 27);
        out.extend_from_slice(&value.to_be_bytes());
    }
}

pub(crate) fn write_uint(out: &mut Vec<u8>, value: u64) {
    write_head(out, MAJOR_UINT, value);
}

pub(crate) fn write_bytes(out: &mut Vec<u8>, data: &[u8]) {
    write_head(out, MAJOR_BYTES, data.len() as u64);
    out.extend_from_slice(data);
}

pub(crate) fn write_text(out: &mut Vec<u8>, text: &str) {
    write_head(out, MAJOR_TEXT, text.len() as u64);
    out.extend_from_slice(text.as_bytes());
}

pub(crate) fn write_array(out: &mut Vec<u8>, len: u64) {
    write_head(out, MAJOR_ARRAY, len);
}

pub(crate) fn write_map(out: &mut Vec<u8>, len: u64) {
    write_head(out, MAJOR_MAP, len);
}

/// A strict reader over a byte slice.
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn consumed(&self, from: usize) -> &'a [u8] {
        &self.data[from..self.pos]
    }

    pub fn finish(&self) -> Result<(), CborError> {
        if self.pos == self.data.len() {
            Ok(())
        } else {
            Err(CborError::Trailing)
        }
    }

    pub fn peek(&self) -> Result<u8, CborError> {
        self.data.get(self.pos).copied().ok_or(CborError::Truncated)
    }

    pub fn expect_byte(&mut self, byte: u8, what: &'static str) -> Result<(), CborError> {
        let found = self.peek()?;
        if found != byte {
            return Err(CborError::UnexpectedType { expected: what, found });
        }
        self.pos += 1;
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CborError> {
        let end = self.pos.checked_add(n).ok_or(CborError::Length)?;
        let slice = self.data.get(self.pos..end).ok_or(CborError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn head(&mut self, major: u8, what: &'static str) -> Result<u64, CborError> {
        let initial = self.peek()?;
        if initial >> 5 != major {
            return Err(CborError::UnexpectedType { expected: what, found: initial });
        }
        self.pos += 1;
        let info = initial & 0x1f;
        let (value, min) = match info {
            0..=23 => return Ok(info as u64),
            24 => (self.take(1)?[0] as u64, 24),
            25 => {
                let b = self.take(2)?;
                (u16::from_be_bytes([b[0], b[1]]) as u64, 0x100)
            }
            26 => {
                let b = self.take(4)?;
                (u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as u64, 0x1_0000)
            }
            27 => {
                let mut buf = [0u8; 8];
                buf.copy_from_slice(self.take(8)?);
                (u64::from_be_bytes(buf), 0x1_0000_0000)
            }
            _ => return Err(CborError::UnexpectedType { expected: what, found: initial }),
        };
        if value < min {
            return Err(CborError::NonCanonical);
        }
        Ok(value)
    }

    pub fn uint(&mut self) -> Result<u64, CborError> {
        self.head(MAJOR_UINT, "unsigned integer")
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CborError> {
        let len = self.head(MAJOR_BYTES, "byte string")?;
        let len = usize::try_from(len).map_err(|_| CborError::Length)?;
        self.take(len)
    }

    pub fn text(&mut self) -> Result<&'a str, CborError> {
        let len = self.head(MAJOR_TEXT, "text string")?;
        let len = usize::try_from(len).map_err(|_| CborError::Length)?;
        std::str::from_utf8(self.take(len)?).map_err(|_| CborError::Utf8)
    }

    pub fn array(&mut self) -> Result<u64, CborError> {
        self.head(MAJOR_ARRAY, "array")
    }

    pub fn map(&mut self) -> Result<u64, CborError> {
        self.head(MAJOR_MAP, "map")
    }

    pub fn is_uint(&self) -> bool {
        matches!(self.peek(), Ok(b) if b >> 5 == MAJOR_UINT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_are_shortest() {
        for (value, expected) in [
            (0u64, "00"),
            (23, "17"),
            (24, "1818"),
            (255, "18ff"),
            (256, "190100"),
            (65536, "1a00010000"),
            (1 << 32, "1b0000000100000000"),
        ] {
            let mut out = Vec::new();
            write_uint(&mut out, value);
            assert_eq!(hex::encode(&out), expected);
            let mut r = Reader::new(&out);
            assert_eq!(r.uint().unwrap(), value);
            r.finish().unwrap();
        }
    }

    #[test]
    fn rejects_non_shortest() {
        assert_eq!(Reader::new(&[0x18, 0x05]).uint(), Err(CborError::NonCanonical));
        assert_eq!(Reader::new(&[0x19, 0x00, 0xff]).uint(), Err(CborError::NonCanonical));
    }

    #[test]
    fn rejects_truncated_and_reserved() {
        assert_eq!(Reader::new(&[0x19, 0x01]).uint(), Err(CborError::Truncated));
        assert!(Reader::new(&[0x1c]).uint().is_err());
        assert_eq!(Reader::new(&[0x45, 0x01]).bytes(), Err(CborError::Truncated));
        assert!(Reader::new(&[0x5b, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]).bytes().is_err());
    }
}
