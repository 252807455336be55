//! Quantization, the learned factorized entropy model used for the rate
//! term, empirical frequency tables and the range coder that consumes them.

mod model;
mod range;
mod table;

use rand::Rng;

pub use model::{FactorizedEntropyModel, RateGrad, FILTERS, LIKELIHOOD_FLOOR, PARAMS_PER_CHANNEL};
pub use range::{range_decode, range_encode, RangeDecoder, RangeEncoder};
pub use table::{SymbolTable, MAX_SPAN, TABLE_BITS, TABLE_TOTAL};

use crate::error::{Error, Result};

/// `q·x + u`, `u ~ U(−½, ½)`: additive-noise stand-in for rounding, in the
/// scaled domain the entropy model sees. The derivative w.r.t. `x` is `q`.
pub fn quantize_sim<R: Rng>(x: &[f64], q: f64, rng: &mut R) -> Vec<f64> {
    x.iter().map(|v| q * v + rng.random_range(-0.5..0.5)).collect()
}

/// `⌊q·x + ½⌋`.
pub fn quantize_value(x: f64, q: f64) -> Result<i32> {
    let v = (q * x + 0.5).floor();
    if !v.is_finite() || v < i32::MIN as f64 || v > i32::MAX as f64 {
        return Err(Error::Overflow(x));
    }
    Ok(v as i32)
}

/// Integer symbols with the quantization step and the minimum symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub symbols: Vec<i32>,
    pub q: f64,
    /// `Q(min(x))`, subtracted before coding so coded symbols start at 0.
    pub offset: i32,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        self.symbols.iter().map(|&s| s as f64 / self.q).collect()
    }

    /// Symbols minus the offset, all non-negative.
    pub fn shifted(&self) -> Vec<i32> {
        self.symbols.iter().map(|&s| s - self.offset).collect()
    }
}

pub fn quantize_hard(x: &[f64], q: f64) -> Result<QuantizedTensor> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::invalid(format!("quantization step {q} must be positive")));
    }
    let symbols = x.iter().map(|&v| quantize_value(v, q)).collect::<Result<Vec<_>>>()?;
    let offset = symbols.iter().copied().min().unwrap_or(0);
    if symbols.iter().any(|&s| s.checked_sub(offset).is_none()) {
        return Err(Error::Overflow(q));
    }
    Ok(QuantizedTensor { symbols, q, offset })
}

/// The table built from a tensor's shifted symbols.
pub fn empirical_table(qt: &QuantizedTensor) -> Result<SymbolTable> {
    SymbolTable::from_symbols(&qt.shifted())
}

/// What a decoder needs besides the table and payload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TensorHeader {
    /// Step as transmitted.
    pub q: f32,
    pub offset: i32,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTensor {
    pub header: TensorHeader,
    pub table: SymbolTable,
    pub payload: Vec<u8>,
    /// The values the decoder will reconstruct.
    pub reconstruction: Vec<f64>,
}

/// Quantizes with the transmitted (`f32`) step and range codes the shifted
/// symbols under their empirical table.
pub fn encode_tensor(x: &[f64], q: f64) -> Result<EncodedTensor> {
    if x.is_empty() {
        return Err(Error::invalid("cannot code an empty tensor"));
    }
    let q32 = q as f32;
    let qt = quantize_hard(x, q32 as f64)?;
    let table = empirical_table(&qt)?;
    let payload = range_encode(&qt.shifted(), &table)?;
    Ok(EncodedTensor {
        header: TensorHeader { q: q32, offset: qt.offset, count: x.len() },
        table,
        payload,
        reconstruction: qt.dequantize(),
    })
}

/// `x̂ = (D(B; ω) + offset) / q`.
pub fn decode_tensor(payload: &[u8], table: &SymbolTable, header: &TensorHeader) -> Result<Vec<f64>> {
    let q = header.q as f64;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::format(format!("quantization step {q} in header")));
    }
    if table.min_symbol() != 0 {
        return Err(Error::format(format!("coded tensor table starts at symbol {}, not 0", table.min_symbol())));
    }
    let top = header.offset as i64 + table.max_symbol() as i64;
    let bottom = header.offset as i64 + table.min_symbol() as i64;
    if top > i32::MAX as i64 || bottom < i32::MIN as i64 {
        return Err(Error::format("header offset and table span overflow 32-bit symbols"));
    }
    let shifted = range_decode(payload, table, header.count)?;
    Ok(shifted.iter().map(|&s| (s + header.offset) as f64 / q).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hard_quantization_examples() {
        assert_eq!(quantize_value(0.0, 1.0).unwrap(), 0);
        assert_eq!(quantize_value(1.4, 1.0).unwrap(), 1);
        assert_eq!(quantize_value(-1.6, 1.0).unwrap(), -2);
        assert_eq!(quantize_value(0.123, 100.0).unwrap(), 12);
        assert!(quantize_value(1e300, 1.0).is_err());
        assert!(quantize_value(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn decode_formula_example() {
        let e = encode_tensor(&[0.123], 100.0).unwrap();
        let x = decode_tensor(&e.payload, &e.table, &e.header).unwrap();
        assert_eq!(x, vec![0.12]);
        assert_eq!(e.reconstruction, x);
    }

    #[test]
    fn offset_is_quantized_minimum() {
        let qt = quantize_hard(&[0.5, -0.26, 0.1], 10.0).unwrap();
        assert_eq!(qt.symbols, vec![5, -3, 1]);
        assert_eq!(qt.offset, -3);
        assert!(qt.shifted().iter().all(|&s| s >= 0));
    }

    #[test]
    fn noise_stays_within_half_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let y = quantize_sim(&x, 50.0, &mut rng);
        for (a, b) in x.iter().zip(&y) {
            assert!((b - 50.0 * a).abs() <= 0.5);
        }
    }

    #[test]
    fn non_positive_step_rejected() {
        assert!(quantize_hard(&[1.0], 0.0).is_err());
        assert!(encode_tensor(&[], 1.0).is_err());
    }
}
