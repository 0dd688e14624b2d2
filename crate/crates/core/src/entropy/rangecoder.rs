//! Byte-oriented range coder with 32-bit range and carry propagation.

use crate::error::{invalid, ClcError, Result};

pub const MAX_TOTAL: u32 = 1 << 16;
const TOP: u32 = 1 << 24;

fn check_interval(cum_lo: u32, cum_hi: u32, total: u32) -> Result<()> {
    if total == 0 || total > MAX_TOTAL {
        return invalid(format!("total {total} outside 1..=65536"));
    }
    if cum_lo >= cum_hi || cum_hi > total {
        return invalid(format!("bad interval [{cum_lo}, {cum_hi}) of {total}"));
    }
    Ok(())
}

/// Smallest number of bytes `k ≤ 4` whose value `v` (remaining bytes zero)
/// lies in `[low, low + range)`; returns `(k, v)` with `v` possibly ≥ 2³².
fn flush_value(low: u32, range: u32) -> (usize, u64) {
    let low = low as u64;
    let high = low + range as u64;
    for k in 0..4 {
        let unit = 1u64 << (32 - 8 * k);
        let v = low.div_ceil(unit) * unit;
        if v < high {
            return (k, v);
        }
    }
    (4, low)
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    fn carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            let (v, overflow) = b.overflowing_add(1);
            *b = v;
            if !overflow {
                return;
            }
        }
        unreachable!("carry out of an empty or saturated stream");
    }

    /// Codes the interval `[cum_lo, cum_hi)` of a `total`-sized frequency table.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32, total: u32) -> Result<()> {
        check_interval(cum_lo, cum_hi, total)?;
        let r = self.range / total;
        self.low += r as u64 * cum_lo as u64;
        self.range = r * (cum_hi - cum_lo);
        if self.low >= 1 << 32 {
            self.low -= 1 << 32;
            self.carry();
        }
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & 0xFFFF_FFFF;
            self.range <<= 8;
        }
        Ok(())
    }

    /// Codes `bits` equiprobable bits (`bits ≤ 16`).
    pub fn encode_bits(&mut self, value: u32, bits: u32) -> Result<()> {
        debug_assert!(bits <= 16);
        if bits == 0 {
            return Ok(());
        }
        let v = value & ((1 << bits) - 1);
        self.encode(v, v + 1, 1 << bits)
    }

    /// Bytes emitted so far, excluding the final flush.
    pub fn bytes_so_far(&self) -> usize {
        self.out.len()
    }

    pub fn finish(mut self) -> Vec<u8> {
        let (k, v) = flush_value(self.low as u32, self.range);
        let mut v = v;
        if v >= 1 << 32 {
            v -= 1 << 32;
            self.carry();
        }
        for i in 0..k {
            self.out.push((v >> (24 - 8 * i)) as u8);
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    /// Mirror of the encoder's `low` (mod 2³²) used to validate the length.
    low: u32,
    shifts: usize,
    pending: Option<u32>,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
            low: 0,
            shifts: 0,
            pending: None,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Cumulative frequency the next symbol falls on.
    pub fn decode_target(&mut self, total: u32) -> Result<u32> {
        if total == 0 || total > MAX_TOTAL {
            return invalid(format!("total {total} outside 1..=65536"));
        }
        let r = self.range / total;
        let t = (self.code / r).min(total - 1);
        self.pending = Some(r);
        Ok(t)
    }

    /// Consumes the interval chosen after [`decode_target`](Self::decode_target).
    pub fn consume(&mut self, cum_lo: u32, cum_hi: u32, total: u32) -> Result<()> {
        check_interval(cum_lo, cum_hi, total)?;
        let r = self.pending.take().unwrap_or(self.range / total);
        let off = r * cum_lo;
        if self.code < off {
            return Err(ClcError::MalformedBitstream("range decoder desynchronized".into()));
        }
        self.code -= off;
        self.low = self.low.wrapping_add(off);
        self.range = r * (cum_hi - cum_lo);
        if self.code >= self.range {
            return Err(ClcError::MalformedBitstream("symbol outside its interval".into()));
        }
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.low <<= 8;
            self.range <<= 8;
            self.shifts += 1;
        }
        Ok(())
    }

    /// Decodes a symbol from a cumulative table `cdf` (`cdf[0] = 0`,
    /// `cdf[n] = total`).
    pub fn decode_symbol(&mut self, cdf: &[u32]) -> Result<usize> {
        let total = *cdf.last().expect("non-empty cdf");
        let t = self.decode_target(total)?;
        // last index with cdf[i] <= t
        let s = cdf.partition_point(|&c| c <= t) - 1;
        self.consume(cdf[s], cdf[s + 1], total)?;
        Ok(s)
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        if bits == 0 {
            return Ok(0);
        }
        let total = 1 << bits;
        let t = self.decode_target(total)?;
        self.consume(t, t + 1, total)?;
        Ok(t)
    }

    /// Checks that the payload has exactly the length the encoder would have
    /// produced for the decoded symbols.
    pub fn finish(self) -> Result<()> {
        let (k, _) = flush_value(self.low, self.range);
        let expected = self.shifts + k;
        if self.data.len() != expected {
            return Err(ClcError::MalformedBitstream(format!(
                "payload is {} bytes, decoded symbols account for {expected}",
                self.data.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cdf_from(freq: &[u32]) -> Vec<u32> {
        let mut cdf = vec![0];
        for f in freq {
            cdf.push(cdf.last().unwrap() + f);
        }
        cdf
    }

    fn round_trip(freq: &[u32], symbols: &[usize]) -> Vec<u8> {
        let cdf = cdf_from(freq);
        let total = *cdf.last().unwrap();
        let mut enc = RangeEncoder::new();
        for &s in symbols {
            enc.encode(cdf[s], cdf[s + 1], total).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &s in symbols {
            assert_eq!(dec.decode_symbol(&cdf).unwrap(), s);
        }
        dec.finish().unwrap();
        bytes
    }

    #[test]
    fn uniform_bytes_cost_one_byte_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let syms: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..256)).collect();
        let bytes = round_trip(&[256; 256], &syms);
        let ratio = bytes.len() as f64 / 10_000.0;
        assert!((ratio - 1.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn single_symbol_alphabet_is_nearly_free() {
        let bytes = round_trip(&[MAX_TOTAL], &[0; 5000]);
        assert!(bytes.len() <= 1, "{}", bytes.len());
    }

    #[test]
    fn fuzzed_sequences_round_trip_near_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let mut freq: Vec<u32> = (0..n).map(|_| rng.random_range(1..2000)).collect();
            let total: u32 = freq.iter().sum();
            if total > MAX_TOTAL {
                freq[0] -= total - MAX_TOTAL;
            }
            let total: u32 = freq.iter().sum();
            let len = rng.random_range(0..300);
            let syms: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
            let bytes = round_trip(&freq, &syms);
            let ideal: f64 = syms.iter().map(|&s| -(freq[s] as f64 / total as f64).log2()).sum();
            assert!((bytes.len() as f64) * 8.0 <= ideal + 16.0 + 1e-3 * ideal, "{} vs {ideal}", bytes.len());
        }
    }

    #[test]
    fn skewed_model_carries() {
        // near-certain symbols push low toward the top and exercise carries
        let freq = [1, MAX_TOTAL - 2, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let syms: Vec<usize> = (0..20_000)
            .map(|_| if rng.random_range(0..100) == 0 { 2 } else { 1 })
            .collect();
        round_trip(&freq, &syms);
    }

    #[test]
    fn truncation_and_bad_intervals_are_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let syms: Vec<usize> = (0..500).map(|_| rng.random_range(0..16)).collect();
        let bytes = round_trip(&[4096; 16], &syms);
        let cdf = cdf_from(&[4096; 16]);
        let cut = &bytes[..bytes.len() - 1];
        let mut dec = RangeDecoder::new(cut);
        let ok = syms.iter().all(|_| dec.decode_symbol(&cdf).is_ok());
        assert!(!ok || dec.finish().is_err());
        let mut enc = RangeEncoder::new();
        assert!(enc.encode(3, 3, 10).is_err());
        assert!(enc.encode(0, 1, MAX_TOTAL + 1).is_err());
    }

    #[test]
    fn raw_bits() {
        let mut enc = RangeEncoder::new();
        for v in 0..300u32 {
            enc.encode_bits(v, 9).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for v in 0..300u32 {
            assert_eq!(dec.decode_bits(9).unwrap(), v);
        }
        dec.finish().unwrap();
    }
}
