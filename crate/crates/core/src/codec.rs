//! Canonical byte encoding.
//!
//! Every hash and signature in the protocol is computed over bytes produced
//! here, so the layout is fixed:
//!
//! ```text
//! unsigned integer   8 bytes, big-endian
//! signed integer     8 bytes, big-endian two's complement
//! tag / bool         1 byte
//! byte string        4-byte big-endian length ‖ bytes
//! list               4-byte big-endian count ‖ elements
//! struct             fields in declaration order, no padding
//! ```

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input (wanted {wanted} bytes, {left} left)")]
    Truncated { wanted: usize, left: usize },
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
    #[error("invalid tag {tag} for {what}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("invalid length {len} for {what}")]
    BadLength { what: &'static str, len: usize },
}

/// Appends canonical encodings to a buffer.
#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        let len = u32::try_from(v.len()).expect("byte string longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(v);
        self
    }

    pub fn value<T: Encode + ?Sized>(&mut self, v: &T) -> &mut Self {
        v.encode_to(self);
        self
    }

    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        let len = u32::try_from(items.len()).expect("list longer than 4G elements");
        self.buf.extend_from_slice(&len.to_be_bytes());
        for item in items {
            item.encode_to(self);
        }
        self
    }

    pub fn option<T: Encode>(&mut self, v: Option<&T>) -> &mut Self {
        match v {
            None => self.u8(0),
            Some(v) => self.u8(1).value(v),
        }
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a canonical encoding.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data }
    }

    pub fn remaining(&self) -> usize {
        self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.data.len() < n {
            return Err(DecodeError::Truncated {
                wanted: n,
                left: self.data.len(),
            });
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::BadTag { what: "bool", tag }),
        }
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    pub fn fixed<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], DecodeError> {
        let len = self.u32()? as usize;
        if len != N {
            return Err(DecodeError::BadLength { what, len });
        }
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn value<T: Decode>(&mut self) -> Result<T, DecodeError> {
        T::decode_from(self)
    }

    pub fn list<T: Decode>(&mut self) -> Result<Vec<T>, DecodeError> {
        let len = self.u32()? as usize;
        // Each element takes at least one byte; refuse counts the input cannot back.
        if len > self.data.len() {
            return Err(DecodeError::BadLength { what: "list", len });
        }
        (0..len).map(|_| T::decode_from(self)).collect()
    }

    pub fn option<T: Decode>(&mut self) -> Result<Option<T>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(self)?)),
            tag => Err(DecodeError::BadTag { what: "option", tag }),
        }
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Trailing(self.data.len()))
        }
    }
}

pub trait Encode {
    fn encode_to(&self, w: &mut Writer);

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_to(&mut w);
        w.finish()
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete value; trailing bytes are an error.
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

impl Encode for u64 {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(*self);
    }
}

impl Decode for u64 {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.u64()
    }
}

impl Encode for i64 {
    fn encode_to(&self, w: &mut Writer) {
        w.i64(*self);
    }
}

impl Decode for i64 {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.i64()
    }
}

impl Encode for [u8] {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(self);
    }
}

impl Encode for Vec<u8> {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(self);
    }
}

impl Decode for Vec<u8> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.bytes()
    }
}

impl<T: Encode + ?Sized> Encode for &T {
    fn encode_to(&self, w: &mut Writer) {
        (**self).encode_to(w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_integer_is_eight_zero_bytes() {
        assert_eq!(0u64.encode(), vec![0u8; 8]);
    }

    #[test]
    fn empty_byte_string_is_four_zero_bytes() {
        assert_eq!(Vec::<u8>::new().encode(), vec![0u8; 4]);
    }

    #[test]
    fn negative_index_round_trips() {
        let bytes = (-1i64).encode();
        assert_eq!(bytes, vec![0xff; 8]);
        assert_eq!(i64::decode(&bytes).unwrap(), -1);
    }

    #[test]
    fn list_layout() {
        let mut w = Writer::new();
        w.list(&[1u64, 2u64]);
        let bytes = w.finish();
        assert_eq!(&bytes[..4], &[0, 0, 0, 2]);
        assert_eq!(bytes.len(), 4 + 16);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = 7u64.encode();
        bytes.push(0);
        assert_eq!(u64::decode(&bytes), Err(DecodeError::Trailing(1)));
    }

    #[test]
    fn truncated_bytes_rejected() {
        let bytes = vec![0, 0, 0, 5, 1, 2];
        assert!(matches!(
            Vec::<u8>::decode(&bytes),
            Err(DecodeError::Truncated { .. })
        ));
    }
}
