//! Slice-ordered coding of latent coefficients and hyper codes.

use super::model::{FreqTable, HYPER_LAPLACE_SCALE};
use super::rangecoder::{RangeDecoder, RangeEncoder};
use super::bitstream::framing_bytes;
use crate::conditioning::{fuse, packed_records_len, ConditioningLatent};
use crate::error::{invalid, ClcError, Result};
use crate::transforms::{hyper_sigma, HyperLatent, Latent, SliceSchedule, HYPER_LOG_MAX, HYPER_STEP};

/// Largest magnitude a hyper code can take.
pub const HYPER_CODE_MAX: i16 = (HYPER_LOG_MAX / HYPER_STEP) as i16;

/// `symbol = round((y − μ)/Δ)` (half away from zero), `recon = symbol·Δ + μ`.
#[inline]
pub fn quantize_residual(y: f64, mu: f64, step: f64) -> (i64, f64) {
    let s = ((y - mu) / step).round() as i64;
    (s, s as f64 * step + mu)
}

/// Mean of the already-coded left and top neighbours of the same channel;
/// zero when neither exists.
#[inline]
pub fn context_pred(recon: &Latent, channel: usize, by: usize, bx: usize) -> f64 {
    match (bx > 0, by > 0) {
        (true, true) => 0.5 * (recon.get(channel, by, bx - 1) + recon.get(channel, by - 1, bx)),
        (true, false) => recon.get(channel, by, bx - 1),
        (false, true) => recon.get(channel, by - 1, bx),
        (false, false) => 0.0,
    }
}

/// Fused prediction mean computed open-loop from the original latent.
/// The encoder summarizes `y − μ` with this to pick the coding scales.
pub fn open_loop_mean(y: &Latent, cond: &ConditioningLatent) -> Latent {
    let mut mu = Latent::zeros_like(y);
    for by in 0..y.blocks_h() {
        for bx in 0..y.blocks_w() {
            let a = cond.alpha[by * y.blocks_w() + bx];
            for ch in 0..y.channels() {
                let m = fuse(a, context_pred(y, ch, by, bx), cond.latent.get(ch, by, bx));
                mu.set(ch, by, bx, m);
            }
        }
    }
    mu
}

/// One Gaussian table per hyper code, built on demand for a fixed step.
struct TableSet {
    step: f64,
    tables: Vec<Option<FreqTable>>,
}

impl TableSet {
    fn new(step: f64) -> Self {
        Self {
            step,
            tables: vec![None; 2 * HYPER_CODE_MAX as usize + 1],
        }
    }

    fn get(&mut self, code: i16) -> &FreqTable {
        let i = (code + HYPER_CODE_MAX) as usize;
        let step = self.step;
        self.tables[i].get_or_insert_with(|| FreqTable::gaussian(hyper_sigma(code) / step))
    }
}

fn check_inputs(
    shape: &Latent,
    cond: &ConditioningLatent,
    hyper: &HyperLatent,
    schedule: &SliceSchedule,
    step: f64,
) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return invalid(format!("quantization step {step} must be positive"));
    }
    if !cond.latent.same_shape(shape) || cond.alpha.len() != shape.block_count() {
        return invalid("conditioning does not match the latent shape");
    }
    if schedule.patch() != shape.patch() {
        return invalid("slice schedule does not match the patch size");
    }
    if hyper.planes() != shape.planes()
        || hyper.groups() != schedule.len()
        || hyper.blocks_w() != shape.blocks_w()
        || hyper.blocks_h() != shape.blocks_h()
    {
        return invalid("hyper latent does not match the latent shape");
    }
    if hyper.codes().iter().any(|c| c.abs() > HYPER_CODE_MAX) {
        return invalid("hyper code out of range");
    }
    Ok(())
}

/// Walks every coefficient in coding order (slice → plane → coefficient →
/// block row → block column), handing `visit` the slice, flat index, table
/// and mean; `visit` returns the quantized symbol.
fn traverse(
    shape: &Latent,
    cond: &ConditioningLatent,
    hyper: &HyperLatent,
    schedule: &SliceSchedule,
    step: f64,
    mut visit: impl FnMut(usize, usize, &FreqTable, f64) -> Result<i64>,
) -> Result<Latent> {
    check_inputs(shape, cond, hyper, schedule, step)?;
    let mut tables = TableSet::new(step);
    let mut recon = Latent::zeros_like(shape);
    let pp = shape.patch() * shape.patch();
    let (bw, bh) = (shape.blocks_w(), shape.blocks_h());
    for s in 0..schedule.len() {
        for plane in 0..shape.planes() {
            for &coef in schedule.slice(s) {
                let ch = plane * pp + coef;
                for by in 0..bh {
                    for bx in 0..bw {
                        let a = cond.alpha[by * bw + bx];
                        let mu = fuse(a, context_pred(&recon, ch, by, bx), cond.latent.get(ch, by, bx));
                        let table = tables.get(hyper.code(plane, s, by, bx));
                        let idx = recon.index(ch, by, bx);
                        let sym = visit(s, idx, table, mu)?;
                        recon.data_mut()[idx] = sym as f64 * step + mu;
                    }
                }
            }
        }
    }
    Ok(recon)
}

/// Codes `y` slice by slice; returns one payload per slice and the
/// reconstruction the decoder will reproduce.
pub fn encode_latent(
    y: &Latent,
    cond: &ConditioningLatent,
    hyper: &HyperLatent,
    schedule: &SliceSchedule,
    step: f64,
) -> Result<(Vec<Vec<u8>>, Latent)> {
    if !cond.latent.same_shape(y) {
        return invalid("conditioning does not match the latent shape");
    }
    let mut encoders: Vec<RangeEncoder> = (0..schedule.len()).map(|_| RangeEncoder::new()).collect();
    let recon = traverse(y, cond, hyper, schedule, step, |s, idx, table, mu| {
        let (sym, _) = quantize_residual(y.data()[idx], mu, step);
        table.encode(&mut encoders[s], sym)?;
        Ok(sym)
    })?;
    Ok((encoders.into_iter().map(RangeEncoder::finish).collect(), recon))
}

/// Inverse of [`encode_latent`]. `shape` supplies the latent geometry.
pub fn decode_latent(
    payloads: &[Vec<u8>],
    shape: &Latent,
    cond: &ConditioningLatent,
    hyper: &HyperLatent,
    schedule: &SliceSchedule,
    step: f64,
) -> Result<Latent> {
    if payloads.len() != schedule.len() {
        return Err(ClcError::MalformedBitstream(format!(
            "{} slice payloads for {} slices",
            payloads.len(),
            schedule.len()
        )));
    }
    let mut decoders: Vec<RangeDecoder> = payloads.iter().map(|p| RangeDecoder::new(p)).collect();
    let recon = traverse(shape, cond, hyper, schedule, step, |s, _, table, _| {
        table.decode(&mut decoders[s])
    })?;
    for d in decoders {
        d.finish()?;
    }
    if recon.data().iter().any(|v| !v.is_finite()) {
        return Err(ClcError::MalformedBitstream("non-finite reconstruction".into()));
    }
    Ok(recon)
}

/// Model code length of the latent symbols, in bits.
pub fn estimate_latent_bits(
    y: &Latent,
    cond: &ConditioningLatent,
    hyper: &HyperLatent,
    schedule: &SliceSchedule,
    step: f64,
) -> Result<f64> {
    let mut bits = 0.0;
    traverse(y, cond, hyper, schedule, step, |_, idx, table, mu| {
        let (sym, _) = quantize_residual(y.data()[idx], mu, step);
        bits += table.cost(sym);
        Ok(sym)
    })?;
    Ok(bits)
}

/// Model bit counts for one coded image, split by section.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateEstimate {
    pub latent_bits: f64,
    pub hyper_bits: f64,
    /// Match records plus reference ids.
    pub side_info_bits: f64,
    /// Fixed header fields and section length prefixes.
    pub framing_bits: f64,
}

impl RateEstimate {
    pub fn total(&self) -> f64 {
        self.latent_bits + self.hyper_bits + self.side_info_bits + self.framing_bits
    }
}

/// Predicted size of the bitstream [`encode_latent`] and [`encode_hyper`]
/// would produce, without running the range coder.
pub fn estimate_rate(
    y: &Latent,
    cond: &ConditioningLatent,
    hyper: &HyperLatent,
    schedule: &SliceSchedule,
    step: f64,
) -> Result<RateEstimate> {
    let m = cond.ref_count;
    let records = packed_records_len(y.blocks_w(), y.blocks_h(), m);
    Ok(RateEstimate {
        latent_bits: estimate_latent_bits(y, cond, hyper, schedule, step)?,
        hyper_bits: estimate_hyper_bits(hyper),
        side_info_bits: 8.0 * (records + 4 * m) as f64,
        framing_bits: 8.0 * (framing_bytes(m, schedule.len()) - 4 * m) as f64,
    })
}

/// Hyper codes as differences from the previous code in raster order
/// (restarting at zero for each plane/group), under a fixed Laplace model.
fn hyper_deltas(hyper: &HyperLatent) -> impl Iterator<Item = i64> + '_ {
    let per_map = hyper.blocks_w() * hyper.blocks_h();
    hyper.codes().chunks(per_map.max(1)).flat_map(|map| {
        let mut prev = 0i64;
        map.iter().map(move |&c| {
            let d = c as i64 - prev;
            prev = c as i64;
            d
        })
    })
}

pub fn encode_hyper(hyper: &HyperLatent) -> Result<Vec<u8>> {
    let table = FreqTable::laplace(HYPER_LAPLACE_SCALE);
    let mut enc = RangeEncoder::new();
    for d in hyper_deltas(hyper) {
        table.encode(&mut enc, d)?;
    }
    Ok(enc.finish())
}

pub fn estimate_hyper_bits(hyper: &HyperLatent) -> f64 {
    let table = FreqTable::laplace(HYPER_LAPLACE_SCALE);
    hyper_deltas(hyper).map(|d| table.cost(d)).sum()
}

pub fn decode_hyper(
    bytes: &[u8],
    planes: usize,
    groups: usize,
    blocks_w: usize,
    blocks_h: usize,
) -> Result<HyperLatent> {
    let table = FreqTable::laplace(HYPER_LAPLACE_SCALE);
    let mut dec = RangeDecoder::new(bytes);
    let per_map = blocks_w * blocks_h;
    let mut codes = Vec::with_capacity(planes * groups * per_map);
    for _ in 0..planes * groups {
        let mut prev = 0i64;
        for _ in 0..per_map {
            let c = prev + table.decode(&mut dec)?;
            if c < i16::MIN as i64 || c > i16::MAX as i64 {
                return Err(ClcError::MalformedBitstream("hyper code overflows i16".into()));
            }
            codes.push(c as i16);
            prev = c;
        }
    }
    dec.finish()?;
    HyperLatent::new(planes, groups, blocks_w, blocks_h, codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::transforms::{analysis, hyper_analysis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fx, fy): (f64, f64) = (rng.random_range(0.02..0.2), rng.random_range(0.02..0.2));
        Image::from_fn(w, h, c, |x, y, ch| {
            let v = 128.0 + 60.0 * (fx * x as f64 + ch as f64).sin() + 50.0 * (fy * y as f64).cos()
                + rng.random_range(-8.0..8.0);
            v.clamp(0.0, 255.0) as u8
        })
        .unwrap()
    }

    fn hyper_for(y: &Latent, cond: &ConditioningLatent, sched: &SliceSchedule) -> HyperLatent {
        let mu = open_loop_mean(y, cond);
        let mut resid = y.clone();
        for (r, m) in resid.data_mut().iter_mut().zip(mu.data()) {
            *r -= m;
        }
        hyper_analysis(&resid, sched).unwrap()
    }

    #[test]
    fn quantizer_rules() {
        assert_eq!(quantize_residual(1.5, 1.5, 1.0), (0, 1.5));
        assert_eq!(quantize_residual(0.5, 0.0, 1.0).0, 1);
        assert_eq!(quantize_residual(-0.5, 0.0, 1.0).0, -1);
        let (s, r) = quantize_residual(3.2, 1.0, 1.0);
        assert_eq!(s, 2);
        assert!((r - 3.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_matches_encoder_reconstruction() {
        let sched = SliceSchedule::new(8, 8).unwrap();
        for (seed, step) in [(1u64, 0.5), (2, 1.0), (3, 4.0), (4, 8.0)] {
            let y = analysis(&smooth(40, 24, 3, seed), 8).unwrap();
            let cond = ConditioningLatent::unconditional(&y);
            let hyper = hyper_for(&y, &cond, &sched);
            let (payloads, recon) = encode_latent(&y, &cond, &hyper, &sched, step).unwrap();
            let dec = decode_latent(&payloads, &y, &cond, &hyper, &sched, step).unwrap();
            assert_eq!(dec, recon);
            for (a, b) in y.data().iter().zip(recon.data()) {
                assert!((a - b).abs() <= step / 2.0 + 1e-9);
            }
            let est = estimate_latent_bits(&y, &cond, &hyper, &sched, step).unwrap();
            let actual: usize = payloads.iter().map(|p| p.len() * 8).sum();
            assert!((actual as f64 - est).abs() <= 0.005 * est + 64.0, "{actual} vs {est}");
        }
    }

    #[test]
    fn perfect_conditioning_costs_almost_nothing() {
        let sched = SliceSchedule::new(8, 8).unwrap();
        let y = analysis(&smooth(32, 32, 1, 5), 8).unwrap();
        let cond = ConditioningLatent {
            latent: y.clone(),
            records: Vec::new(),
            alpha: vec![1.0 / 32.0; y.block_count()],
            ref_count: 1,
        };
        // α is small but not zero; give the residual its own scale
        let hyper = hyper_for(&y, &cond, &sched);
        let (payloads, _) = encode_latent(&y, &cond, &hyper, &sched, 1.0).unwrap();
        let zero = ConditioningLatent {
            alpha: vec![0.0; y.block_count()],
            ..cond.clone()
        };
        let hyper0 = hyper_for(&y, &zero, &sched);
        let (exact, _) = encode_latent(&y, &zero, &hyper0, &sched, 1.0).unwrap();
        assert!(exact.iter().all(|p| p.len() <= 2), "{:?}", exact.iter().map(Vec::len).collect::<Vec<_>>());
        let uncond = ConditioningLatent::unconditional(&y);
        let (plain, _) = encode_latent(&y, &uncond, &hyper_for(&y, &uncond, &sched), &sched, 1.0).unwrap();
        let size = |p: &[Vec<u8>]| p.iter().map(Vec::len).sum::<usize>();
        assert!(size(&payloads) < size(&plain));
    }

    #[test]
    fn causality_future_elements_do_not_change_earlier_bytes() {
        let sched = SliceSchedule::new(8, 8).unwrap();
        let y = analysis(&smooth(32, 32, 1, 6), 8).unwrap();
        let cond = ConditioningLatent::unconditional(&y);
        let hyper = hyper_for(&y, &cond, &sched);
        let (base, _) = encode_latent(&y, &cond, &hyper, &sched, 1.0).unwrap();
        // perturb every coefficient of the last slice
        let mut y2 = y.clone();
        for &coef in sched.slice(7) {
            for by in 0..y.blocks_h() {
                for bx in 0..y.blocks_w() {
                    let v = y2.get(coef, by, bx);
                    y2.set(coef, by, bx, v + 37.0);
                }
            }
        }
        let (pert, _) = encode_latent(&y2, &cond, &hyper, &sched, 1.0).unwrap();
        assert_eq!(&base[..7], &pert[..7]);
        assert_ne!(base[7], pert[7]);
    }

    #[test]
    fn truncated_payloads_are_sometimes_rejected() {
        // a shortened slice can still be a valid code for other symbols, so
        // only the container length prefixes make truncation certain
        let sched = SliceSchedule::new(8, 8).unwrap();
        let mut rejected = 0;
        let mut trials = 0;
        for seed in 0..6 {
            let y = analysis(&smooth(32, 32, 1, 7 + seed), 8).unwrap();
            let cond = ConditioningLatent::unconditional(&y);
            let hyper = hyper_for(&y, &cond, &sched);
            let (payloads, recon) = encode_latent(&y, &cond, &hyper, &sched, 1.0).unwrap();
            for s in 0..payloads.len() {
                if payloads[s].is_empty() {
                    continue;
                }
                let mut cut = payloads.clone();
                cut[s].pop();
                trials += 1;
                match decode_latent(&cut, &y, &cond, &hyper, &sched, 1.0) {
                    Err(ClcError::MalformedBitstream(_)) => rejected += 1,
                    Err(e) => panic!("unexpected error {e}"),
                    Ok(d) => assert_ne!(d, recon),
                }
            }
        }
        assert!(rejected > 0, "{rejected}/{trials}");
    }

    #[test]
    fn hyper_round_trip_and_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codes: Vec<i16> = (0..3 * 8 * 6 * 5).map(|_| rng.random_range(-64..=64)).collect();
        let h = HyperLatent::new(3, 8, 6, 5, codes).unwrap();
        let bytes = encode_hyper(&h).unwrap();
        assert_eq!(decode_hyper(&bytes, 3, 8, 6, 5).unwrap(), h);
        let est = estimate_hyper_bits(&h) / 8.0;
        assert!((bytes.len() as f64 - est).abs() <= 16.0);
        let flat = HyperLatent::new(1, 8, 4, 4, vec![0; 128]).unwrap();
        assert!(encode_hyper(&flat).unwrap().len() * 8 < estimate_hyper_bits(&h) as usize / 10);
    }
}
