use std::fmt;

use crate::error::{invalid, Result};

/// Bit string packed least-significant-bit first. The wire form is a u32
/// little-endian bit count followed by ⌈len/8⌉ bytes; padding bits are zero.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    len: usize,
    bytes: Vec<u8>,
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(")?;
        for i in 0..self.len {
            write!(f, "{}", self.get(i) as u8)?;
        }
        write!(f, ")")
    }
}

impl BitString {
    pub fn new() -> Self {
        BitString::default()
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut s = BitString::new();
        for &b in bits {
            s.push(b);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 1 << (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Appends the low `width` bits of `value`, least significant first.
    pub fn push_uint(&mut self, value: u64, width: usize) {
        for k in 0..width {
            self.push(value >> k & 1 == 1);
        }
    }

    pub fn read_uint(&self, offset: usize, width: usize) -> u64 {
        (0..width).fold(0u64, |acc, k| acc | (self.get(offset + k) as u64) << k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.bytes.len());
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 4 {
            return invalid("bit string is missing its length prefix");
        }
        let len = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
        let body = &buf[4..];
        if body.len() != len.div_ceil(8) {
            return invalid(format!("bit string body has {} bytes for {len} bits", body.len()));
        }
        if len % 8 != 0 {
            if let Some(last) = body.last() {
                if last >> (len % 8) != 0 {
                    return invalid("bit string has nonzero padding");
                }
            }
        }
        Ok(BitString {
            len,
            bytes: body.to_vec(),
        })
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }
}
