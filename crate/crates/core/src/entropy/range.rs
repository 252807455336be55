//! Integer range coder with a 64-bit low register (carry propagated through
//! a cached byte), a 32-bit range and byte-wise renormalization.

use super::table::{SymbolTable, TABLE_BITS};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Encodes the interval `[start, start + size)` out of `2^TABLE_BITS`.
    pub fn encode(&mut self, start: u32, size: u32) {
        let r = self.range >> TABLE_BITS;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Truncated("range-coded payload shorter than its 5-byte preamble".into()));
        }
        if bytes[0] != 0 {
            return Err(Error::format("range-coded payload must start with a zero byte"));
        }
        let code = bytes[1..5].iter().fold(0u32, |c, &b| (c << 8) | b as u32);
        Ok(RangeDecoder { code, range: u32::MAX, bytes, pos: 5 })
    }

    pub fn decode(&mut self, table: &SymbolTable) -> Result<usize> {
        let r = self.range >> TABLE_BITS;
        let value = self.code / r;
        if value >= 1 << TABLE_BITS {
            return Err(Error::format("range decoder state outside the table"));
        }
        let index = table.lookup(value);
        let (start, size) = table.interval(index);
        self.code -= r * start;
        self.range = r * size;
        while self.range < TOP {
            let b = *self
                .bytes
                .get(self.pos)
                .ok_or_else(|| Error::Truncated("range-coded payload ended early".into()))?;
            self.pos += 1;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(index)
    }

    /// Checks that the payload was consumed exactly and the final state is
    /// the one the encoder flushed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after the last symbol",
                self.bytes.len() - self.pos
            )));
        }
        if self.code != 0 {
            return Err(Error::format("range decoder did not end on the flushed state"));
        }
        Ok(())
    }
}

/// Range codes `symbols` with `table`.
pub fn range_encode(symbols: &[i32], table: &SymbolTable) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        let index = table.index_of(s)?;
        let (start, size) = table.interval(index);
        enc.encode(start, size);
    }
    Ok(enc.finish())
}

/// Decodes exactly `count` symbols.
pub fn range_decode(bytes: &[u8], table: &SymbolTable, count: usize) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(table.symbol_at(dec.decode(table)?));
    }
    dec.finish()?;
    Ok(out)
}
