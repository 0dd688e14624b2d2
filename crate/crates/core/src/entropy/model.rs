//! Discretized probability models over the clipped symbol alphabet.

use super::rangecoder::{RangeDecoder, RangeEncoder, MAX_TOTAL};
use crate::error::{invalid, ClcError, Result};
use crate::numerics::gaussian_cdf;
use crate::transforms::SIGMA_MIN;

/// Symbols live in `[−SYMBOL_MAX, SYMBOL_MAX]`; the two end symbols double
/// as escapes followed by an Exp-Golomb coded excess.
pub const SYMBOL_MAX: i64 = 255;
pub const ALPHABET: usize = (2 * SYMBOL_MAX + 1) as usize;
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;
pub const HYPER_LAPLACE_SCALE: f64 = 8.0;

/// Probability of integer bin `k` under `N(μ, σ²)`, renormalized to the
/// mass inside the clipped alphabet and floored at 2⁻¹⁶.
pub fn gaussian_bin_prob(mu: f64, sigma: f64, k: i64) -> Result<f64> {
    if !(sigma >= SIGMA_MIN) {
        return invalid(format!("σ={sigma} below the minimum {SIGMA_MIN}"));
    }
    if k.abs() > SYMBOL_MAX {
        return Ok(0.0);
    }
    let cdf = |x: f64| gaussian_cdf((x - mu) / sigma);
    let inside = cdf(SYMBOL_MAX as f64 + 0.5) - cdf(-(SYMBOL_MAX as f64) - 0.5);
    // evaluate on the near side of the mean so tails keep their precision
    let mass = if k as f64 > mu {
        gaussian_cdf((mu - k as f64 + 0.5) / sigma) - gaussian_cdf((mu - k as f64 - 0.5) / sigma)
    } else {
        cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5)
    };
    let p = mass / inside.max(f64::MIN_POSITIVE);
    Ok(p.max(PROB_FLOOR))
}

/// Integer frequency table with total 2¹⁶; every symbol has frequency ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    cdf: Vec<u32>,
}

impl FreqTable {
    /// Quantizes `probs` (one per alphabet symbol, any positive scale).
    pub fn from_probs(probs: &[f64]) -> Self {
        let n = probs.len();
        let spare = MAX_TOTAL - n as u32;
        let sum: f64 = probs.iter().sum();
        let mut freq: Vec<u32> = probs
            .iter()
            .map(|&p| 1 + (p / sum * spare as f64).floor() as u32)
            .collect();
        let used: u32 = freq.iter().sum();
        let mut top = 0;
        for i in 1..n {
            if freq[i] > freq[top] {
                top = i;
            }
        }
        freq[top] += MAX_TOTAL - used;
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0);
        for f in freq {
            cdf.push(cdf.last().unwrap() + f);
        }
        Self { cdf }
    }

    /// Table for a zero-mean Gaussian of scale `sigma` (in symbol units).
    pub fn gaussian(sigma: f64) -> Self {
        let sigma = sigma.max(SIGMA_MIN);
        let probs: Vec<f64> = (-SYMBOL_MAX..=SYMBOL_MAX)
            .map(|k| gaussian_bin_prob(0.0, sigma, k).expect("σ floored"))
            .collect();
        Self::from_probs(&probs)
    }

    /// Table for `p(k) ∝ exp(−|k|/scale)`.
    pub fn laplace(scale: f64) -> Self {
        let probs: Vec<f64> = (-SYMBOL_MAX..=SYMBOL_MAX)
            .map(|k| (-(k.abs() as f64) / scale).exp().max(PROB_FLOOR))
            .collect();
        Self::from_probs(&probs)
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    #[inline]
    pub fn freq(&self, index: usize) -> u32 {
        self.cdf[index + 1] - self.cdf[index]
    }

    /// Exact code length in bits of symbol `s`, escapes included.
    pub fn cost(&self, s: i64) -> f64 {
        let clipped = s.clamp(-SYMBOL_MAX, SYMBOL_MAX);
        let f = self.freq((clipped + SYMBOL_MAX) as usize);
        let mut bits = -(f as f64 / MAX_TOTAL as f64).log2();
        if s.abs() >= SYMBOL_MAX {
            bits += escape_bits((s.abs() - SYMBOL_MAX) as u64) as f64;
        }
        bits
    }

    pub fn encode(&self, enc: &mut RangeEncoder, s: i64) -> Result<()> {
        let clipped = s.clamp(-SYMBOL_MAX, SYMBOL_MAX);
        let i = (clipped + SYMBOL_MAX) as usize;
        enc.encode(self.cdf[i], self.cdf[i + 1], MAX_TOTAL)?;
        if s.abs() >= SYMBOL_MAX {
            encode_escape(enc, (s.abs() - SYMBOL_MAX) as u64)?;
        }
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder) -> Result<i64> {
        let s = dec.decode_symbol(&self.cdf)? as i64 - SYMBOL_MAX;
        if s.abs() == SYMBOL_MAX {
            let extra = decode_escape(dec)? as i64;
            return Ok(s.signum() * (SYMBOL_MAX + extra));
        }
        Ok(s)
    }
}

/// Length of the order-0 Exp-Golomb code of `v`.
pub fn escape_bits(v: u64) -> u32 {
    2 * (64 - (v + 1).leading_zeros() - 1) + 1
}

fn encode_escape(enc: &mut RangeEncoder, v: u64) -> Result<()> {
    let x = v + 1;
    let n = 63 - x.leading_zeros();
    for _ in 0..n {
        enc.encode_bits(0, 1)?;
    }
    enc.encode_bits(1, 1)?;
    let rem = x - (1 << n);
    let mut left = n;
    while left > 0 {
        let take = left.min(16);
        left -= take;
        enc.encode_bits(((rem >> left) & ((1 << take) - 1)) as u32, take)?;
    }
    Ok(())
}

fn decode_escape(dec: &mut RangeDecoder) -> Result<u64> {
    let mut n = 0u32;
    while dec.decode_bits(1)? == 0 {
        n += 1;
        if n > 40 {
            return Err(ClcError::MalformedBitstream("escape prefix too long".into()));
        }
    }
    let mut rem = 0u64;
    let mut left = n;
    while left > 0 {
        let take = left.min(16);
        left -= take;
        rem = (rem << take) | dec.decode_bits(take)? as u64;
    }
    Ok((1u64 << n) + rem - 1)
}
