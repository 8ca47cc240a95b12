//! Canonical byte encoding for everything that is hashed, signed, or
//! compared bit-exactly (transactions, blocks, receipts, digest preimages).
//!
//! Format, fixed for the lifetime of a chain:
//! - `u8`/`bool`: one byte (`bool` is 0 or 1)
//! - `u32`/`u64`: big-endian, fixed width
//! - byte strings and text: `u32` big-endian length prefix, then the raw bytes
//!   (text is UTF-8)
//! - sequences: `u32` element count, then each element
//! - options: tag byte 0 (none) or 1 (some), then the payload
//! - enums: one tag byte, then the variant payload
//! - structs: fields in declaration order, no padding
//!
//! Decoding is strict: unknown tags, truncation, and trailing bytes are
//! errors, so a single flipped byte anywhere in a sealed block is caught by
//! re-serialization during chain verification.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CanonError {
    #[error("canonical decode: input truncated (needed {needed} more bytes)")]
    Truncated { needed: usize },
    #[error("canonical decode: {0} bytes left after decoding")]
    TrailingBytes(usize),
    #[error("canonical decode: invalid tag {tag} for {what}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("canonical decode: invalid UTF-8 in text field")]
    BadUtf8,
    #[error("canonical decode: length {len} exceeds remaining input")]
    BadLength { len: usize },
}

/// Append-only canonical byte writer.
#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_domain(domain: &'static str) -> Self {
        let mut e = Self::new();
        e.put_str(domain);
        e
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// Fixed-width raw bytes, no length prefix. For hashes and addresses
    /// whose width is part of the schema.
    pub fn put_raw(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// Length-prefixed byte string.
    pub fn put_bytes(&mut self, v: &[u8]) {
        self.put_u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    /// Length-prefixed UTF-8 text.
    pub fn put_str(&mut self, v: &str) {
        self.put_bytes(v.as_bytes());
    }

    pub fn put_seq<T: CanonEncode>(&mut self, items: &[T]) {
        self.put_u32(items.len() as u32);
        for item in items {
            item.encode(self);
        }
    }

    pub fn put_opt<T: CanonEncode>(&mut self, v: &Option<T>) {
        match v {
            None => self.put_u8(0),
            Some(inner) => {
                self.put_u8(1);
                inner.encode(self);
            }
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }
}

/// Strict canonical byte reader.
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CanonError> {
        let remaining = self.input.len() - self.pos;
        if remaining < n {
            return Err(CanonError::Truncated {
                needed: n - remaining,
            });
        }
        let slice = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u8(&mut self) -> Result<u8, CanonError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, CanonError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CanonError::BadTag { what: "bool", tag }),
        }
    }

    pub fn u32(&mut self) -> Result<u32, CanonError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CanonError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], CanonError> {
        self.take(n)
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CanonError> {
        let len = self.u32()? as usize;
        if len > self.input.len() - self.pos {
            return Err(CanonError::BadLength { len });
        }
        Ok(self.take(len)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, CanonError> {
        String::from_utf8(self.bytes()?).map_err(|_| CanonError::BadUtf8)
    }

    pub fn seq<T: CanonDecode>(&mut self) -> Result<Vec<T>, CanonError> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            out.push(T::decode(self)?);
        }
        Ok(out)
    }

    pub fn opt<T: CanonDecode>(&mut self) -> Result<Option<T>, CanonError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(self)?)),
            tag => Err(CanonError::BadTag {
                what: "option",
                tag,
            }),
        }
    }

    /// Fail unless every input byte was consumed.
    pub fn finish(self) -> Result<(), CanonError> {
        let left = self.input.len() - self.pos;
        if left == 0 {
            Ok(())
        } else {
            Err(CanonError::TrailingBytes(left))
        }
    }
}

pub trait CanonEncode {
    fn encode(&self, enc: &mut Encoder);

    fn canon_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }
}

pub trait CanonDecode: Sized {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError>;

    fn from_canon_bytes(input: &[u8]) -> Result<Self, CanonError> {
        let mut dec = Decoder::new(input);
        let value = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

impl CanonEncode for u64 {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(*self);
    }
}

impl CanonDecode for u64 {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        dec.u64()
    }
}

impl CanonEncode for Vec<u8> {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_bytes(self);
    }
}

impl CanonDecode for Vec<u8> {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        dec.bytes()
    }
}

impl CanonEncode for String {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(self);
    }
}

impl CanonDecode for String {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        dec.str()
    }
}
