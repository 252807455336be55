use std::io::Read;

use crate::error::{Error, Result};

pub const TABLE_BITS: u32 = 16;
pub const TABLE_TOTAL: u32 = 1 << TABLE_BITS;
/// Widest symbol span a table may cover.
pub const MAX_SPAN: usize = 1 << 15;

/// Symbol frequencies `ω` over a contiguous span, normalized to `2^16`.
///
/// On the wire: `i32 min_symbol, u16 span, span × u16 (frequency − 1)`.
/// The stored value is offset by one because a single-symbol table carries
/// the full `2^16`, which does not fit a `u16`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    min_symbol: i32,
    freqs: Vec<u32>,
    cum: Vec<u32>,
}

impl SymbolTable {
    pub fn new(min_symbol: i32, freqs: Vec<u32>) -> Result<Self> {
        if freqs.is_empty() || freqs.len() > MAX_SPAN {
            return Err(Error::invalid(format!("table span {} outside [1, {MAX_SPAN}]", freqs.len())));
        }
        if freqs.contains(&0) {
            return Err(Error::invalid("table frequencies must be positive"));
        }
        if min_symbol.checked_add(freqs.len() as i32 - 1).is_none() {
            return Err(Error::invalid("table span overflows 32-bit symbols"));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for &f in &freqs {
            acc += f as u64;
            if acc > TABLE_TOTAL as u64 {
                break;
            }
            cum.push(acc as u32);
        }
        if acc != TABLE_TOTAL as u64 {
            return Err(Error::invalid(format!("table frequencies sum to {acc}, not {TABLE_TOTAL}")));
        }
        Ok(SymbolTable { min_symbol, freqs, cum })
    }

    /// Histogram of `symbols` over `[min, max]`, scaled to `2^16` with every
    /// in-span symbol getting at least 1. Rounding is largest-remainder with
    /// ties going to the lower symbol.
    pub fn from_symbols(symbols: &[i32]) -> Result<Self> {
        let (&lo, &hi) = match (symbols.iter().min(), symbols.iter().max()) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(Error::invalid("table of an empty symbol set")),
        };
        let span = hi as i64 - lo as i64 + 1;
        if span as usize > MAX_SPAN {
            return Err(Error::invalid(format!("symbol span {span} exceeds {MAX_SPAN}")));
        }
        let span = span as usize;
        let mut counts = vec![0u64; span];
        for &s in symbols {
            counts[(s - lo) as usize] += 1;
        }
        let n = symbols.len() as u64;
        let spare = TABLE_TOTAL as u64 - span as u64;
        let mut freqs = Vec::with_capacity(span);
        let mut remainders = Vec::with_capacity(span);
        let mut assigned = 0u64;
        for (i, &c) in counts.iter().enumerate() {
            let share = c * spare;
            freqs.push(1 + (share / n) as u32);
            assigned += share / n;
            remainders.push((share % n, i));
        }
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take((spare - assigned) as usize) {
            freqs[i] += 1;
        }
        SymbolTable::new(lo, freqs)
    }

    pub fn min_symbol(&self) -> i32 {
        self.min_symbol
    }

    pub fn max_symbol(&self) -> i32 {
        self.min_symbol + self.freqs.len() as i32 - 1
    }

    pub fn span(&self) -> usize {
        self.freqs.len()
    }

    pub fn frequencies(&self) -> &[u32] {
        &self.freqs
    }

    pub fn index_of(&self, symbol: i32) -> Result<usize> {
        if symbol < self.min_symbol || symbol > self.max_symbol() {
            return Err(Error::SymbolOutOfRange {
                symbol: symbol as i64,
                min: self.min_symbol as i64,
                max: self.max_symbol() as i64,
            });
        }
        Ok((symbol - self.min_symbol) as usize)
    }

    pub fn symbol_at(&self, index: usize) -> i32 {
        self.min_symbol + index as i32
    }

    pub fn interval(&self, index: usize) -> (u32, u32) {
        (self.cum[index], self.freqs[index])
    }

    /// Index whose cumulative interval contains `value < 2^16`.
    pub fn lookup(&self, value: u32) -> usize {
        self.cum.partition_point(|&c| c <= value) - 1
    }

    pub fn probability(&self, symbol: i32) -> Result<f64> {
        Ok(self.freqs[self.index_of(symbol)?] as f64 / TABLE_TOTAL as f64)
    }

    /// Cross-entropy of `symbols` under this table, in bits.
    pub fn rate_bits(&self, symbols: &[i32]) -> Result<f64> {
        let mut total = 0.0;
        for &s in symbols {
            total -= self.probability(s)?.log2();
        }
        Ok(total)
    }

    pub fn wire_len(&self) -> usize {
        4 + 2 + 2 * self.freqs.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.min_symbol.to_le_bytes());
        out.extend_from_slice(&(self.freqs.len() as u16).to_le_bytes());
        for &f in &self.freqs {
            out.extend_from_slice(&((f - 1) as u16).to_le_bytes());
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b2 = [0u8; 2];
        read_exact(r, &mut b4, "table minimum")?;
        let min_symbol = i32::from_le_bytes(b4);
        read_exact(r, &mut b2, "table span")?;
        let span = u16::from_le_bytes(b2) as usize;
        let mut freqs = Vec::with_capacity(span);
        for _ in 0..span {
            read_exact(r, &mut b2, "table frequencies")?;
            freqs.push(u16::from_le_bytes(b2) as u32 + 1);
        }
        SymbolTable::new(min_symbol, freqs).map_err(|e| Error::format(format!("bad symbol table: {e}")))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Truncated(what.into()))
}
