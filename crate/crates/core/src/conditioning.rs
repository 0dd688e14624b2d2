//! Block matching against reference latents and the fused prediction mean.

use crate::error::{invalid, ClcError, Result};
use crate::numerics::{dot, softmax_in_place, squared_distance, Matrix};
use crate::transforms::Latent;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_WINDOW: usize = 2;
pub const MAX_WINDOW: usize = 3;
pub const GAIN_LEVELS: u8 = 64;
pub const GAIN_UNITY: u8 = 32;
pub const ALPHA_LEVELS: u8 = 16;
/// Largest reference count the record format can address.
pub const MAX_REFS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub bx: usize,
    pub by: usize,
    pub ref_index: usize,
    pub dx: i32,
    pub dy: i32,
    pub score: f64,
    pub gain_code: u8,
    pub alpha_code: u8,
}

impl MatchRecord {
    pub fn gain(&self) -> f64 {
        gain_from_code(self.gain_code)
    }

    pub fn alpha(&self) -> f64 {
        alpha_from_code(self.alpha_code)
    }
}

/// Fused conditioning: the aligned reference latent `y_a`, the records that
/// produced it and the per-block fusion weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningLatent {
    pub latent: Latent,
    pub records: Vec<MatchRecord>,
    /// Decoded α per block, raster order.
    pub alpha: Vec<f64>,
    /// Number of references the records index into.
    pub ref_count: usize,
}

impl ConditioningLatent {
    /// No conditioning: `y_a = 0` and `α = 1`, so the mean is the causal
    /// context prediction alone.
    pub fn unconditional(shape: &Latent) -> Self {
        Self {
            latent: Latent::zeros_like(shape),
            records: Vec::new(),
            alpha: vec![1.0; shape.block_count()],
            ref_count: 0,
        }
    }
}

pub fn gain_from_code(code: u8) -> f64 {
    code as f64 / 32.0
}

pub fn gain_code(g: f64) -> u8 {
    (g * 32.0).round().clamp(0.0, (GAIN_LEVELS - 1) as f64) as u8
}

/// Code `c` decodes to `c/16`, except code 0 which maps to `1/32` so that
/// every weight stays strictly inside (0, 1).
pub fn alpha_from_code(code: u8) -> f64 {
    (code as f64).max(0.5) / ALPHA_LEVELS as f64
}

pub fn alpha_code(alpha: f64) -> u8 {
    (alpha * ALPHA_LEVELS as f64)
        .round()
        .clamp(0.0, (ALPHA_LEVELS - 1) as f64) as u8
}

/// Matching descriptor: all colour planes with their DC terms removed,
/// L2-normalized (zero blocks stay zero).
pub fn block_descriptor(latent: &Latent, by: usize, bx: usize) -> Vec<f64> {
    let pp = latent.patch() * latent.patch();
    let block = latent.block(by, bx);
    let mut v: Vec<f64> = Vec::with_capacity(block.len() - latent.planes());
    for plane in 0..latent.planes() {
        v.extend_from_slice(&block[plane * pp + 1..(plane + 1) * pp]);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Row-softmax of descriptor inner products at temperature `tau`.
pub fn clm_similarity(y_blocks: &Matrix, yr_blocks: &Matrix, tau: f64) -> Result<Matrix> {
    if yr_blocks.rows() == 0 {
        return invalid("similarity needs at least one reference block");
    }
    if !(tau > 0.0) {
        return invalid("temperature must be positive");
    }
    if y_blocks.cols() != yr_blocks.cols() {
        return invalid("descriptor dimensions differ");
    }
    let mut s = Matrix::zeros(y_blocks.rows(), yr_blocks.rows());
    for i in 0..y_blocks.rows() {
        let row = s.row_mut(i);
        for (j, r) in row.iter_mut().enumerate() {
            *r = dot(y_blocks.row(i), yr_blocks.row(j));
        }
        softmax_in_place(row, tau);
    }
    Ok(s)
}

fn wrap(v: i64, n: usize) -> usize {
    v.rem_euclid(n as i64) as usize
}

/// Reference block position for a target block and offset. Reference grids
/// of a different size are addressed periodically.
#[inline]
pub fn ref_block(reference: &Latent, by: usize, bx: usize, dy: i32, dx: i32) -> (usize, usize) {
    (
        wrap(by as i64 + dy as i64, reference.blocks_h()),
        wrap(bx as i64 + dx as i64, reference.blocks_w()),
    )
}

fn check_refs(y: &Latent, refs: &[Latent], window: usize) -> Result<()> {
    if refs.is_empty() {
        return invalid("matching needs at least one reference");
    }
    if refs.len() > MAX_REFS {
        return invalid(format!("at most {MAX_REFS} references are supported"));
    }
    if window > MAX_WINDOW {
        return invalid(format!("search window {window} exceeds {MAX_WINDOW}"));
    }
    for r in refs {
        if r.planes() != y.planes() || r.patch() != y.patch() {
            return invalid("reference latent layout differs from the target");
        }
    }
    Ok(())
}

/// For every target block, the best-scoring reference block over all
/// references and offsets within `±window`. `y_m` copies the chosen blocks.
pub fn clm_match(
    y: &Latent,
    refs: &[Latent],
    window: usize,
    tau: f64,
) -> Result<(Latent, Vec<MatchRecord>)> {
    check_refs(y, refs, window)?;
    if !(tau > 0.0) {
        return invalid("temperature must be positive");
    }
    let w = window as i32;
    let ref_desc: Vec<Vec<Vec<f64>>> = refs
        .iter()
        .map(|r| {
            let mut d = Vec::with_capacity(r.block_count());
            for by in 0..r.blocks_h() {
                for bx in 0..r.blocks_w() {
                    d.push(block_descriptor(r, by, bx));
                }
            }
            d
        })
        .collect();
    let mut y_m = Latent::zeros_like(y);
    let mut records = Vec::with_capacity(y.block_count());
    let side = (2 * w + 1) as usize;
    let mut logits = Vec::with_capacity(refs.len() * side * side);
    for by in 0..y.blocks_h() {
        for bx in 0..y.blocks_w() {
            let q = block_descriptor(y, by, bx);
            logits.clear();
            let mut best = (f64::NEG_INFINITY, 0usize, 0i32, 0i32);
            for (m, r) in refs.iter().enumerate() {
                for dy in -w..=w {
                    for dx in -w..=w {
                        let (ry, rx) = ref_block(r, by, bx, dy, dx);
                        let s = dot(&q, &ref_desc[m][ry * r.blocks_w() + rx]);
                        logits.push(s);
                        if s > best.0 {
                            best = (s, m, dy, dx);
                        }
                    }
                }
            }
            softmax_in_place(&mut logits, tau);
            // the argmax logit carries the largest softmax weight
            let score = logits.iter().copied().fold(0.0, f64::max).min(1.0);
            let (_, m, dy, dx) = best;
            let (ry, rx) = ref_block(&refs[m], by, bx, dy, dx);
            y_m.block_mut(by, bx).copy_from_slice(refs[m].block(ry, rx));
            records.push(MatchRecord {
                bx,
                by,
                ref_index: m,
                dx,
                dy,
                score,
                gain_code: GAIN_UNITY,
                alpha_code: 0,
            });
        }
    }
    Ok((y_m, records))
}

/// Least-squares gain of `c` towards `y`, clipped to `[0, 2]`.
pub fn ls_gain(y: &[f64], c: &[f64]) -> f64 {
    let cc = dot(c, c);
    if cc <= 0.0 {
        return 0.0;
    }
    (dot(y, c) / cc).clamp(0.0, 2.0)
}

/// Refines each record's offset by a ±1 re-search (within the window) that
/// minimizes residual energy, then fits and quantizes a per-block gain.
/// With `refine == false` offsets are kept and the gain is fixed at 1.
pub fn clm_align(
    y: &Latent,
    refs: &[Latent],
    records: &mut [MatchRecord],
    window: usize,
    refine: bool,
) -> Result<Latent> {
    check_refs(y, refs, window)?;
    if records.len() != y.block_count() {
        return invalid("records must cover every block");
    }
    let w = window as i32;
    let mut y_a = Latent::zeros_like(y);
    for rec in records.iter_mut() {
        let r = refs
            .get(rec.ref_index)
            .ok_or_else(|| ClcError::InvalidArgument("record names a missing reference".into()))?;
        let target = y.block(rec.by, rec.bx);
        if refine {
            let (ry, rx) = ref_block(r, rec.by, rec.bx, rec.dy, rec.dx);
            let mut best = (squared_distance(target, r.block(ry, rx)), rec.dy, rec.dx);
            for dy in (rec.dy - 1).max(-w)..=(rec.dy + 1).min(w) {
                for dx in (rec.dx - 1).max(-w)..=(rec.dx + 1).min(w) {
                    let (ry, rx) = ref_block(r, rec.by, rec.bx, dy, dx);
                    let e = squared_distance(target, r.block(ry, rx));
                    if e < best.0 {
                        best = (e, dy, dx);
                    }
                }
            }
            rec.dy = best.1;
            rec.dx = best.2;
        }
        let (ry, rx) = ref_block(r, rec.by, rec.bx, rec.dy, rec.dx);
        let cand = r.block(ry, rx);
        rec.gain_code = if refine {
            gain_code(ls_gain(target, cand))
        } else {
            GAIN_UNITY
        };
        let g = gain_from_code(rec.gain_code);
        for (dst, &c) in y_a.block_mut(rec.by, rec.bx).iter_mut().zip(cand) {
            *dst = g * c;
        }
    }
    Ok(y_a)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `α = sigmoid(w0 + w1·score)` per record, quantized into `alpha_code`.
/// Returns the decoded weights the decoder will see.
pub fn cls_weights(records: &mut [MatchRecord], w0: f64, w1: f64) -> Vec<f64> {
    records
        .iter_mut()
        .map(|r| {
            r.alpha_code = alpha_code(sigmoid(w0 + w1 * r.score));
            r.alpha()
        })
        .collect()
}

/// `μ = α⊙context + (1−α)⊙y_a` with α broadcast over each block's channels.
pub fn cls_predict_mean(context_pred: &Latent, y_a: &Latent, alpha: &[f64]) -> Result<Latent> {
    if !context_pred.same_shape(y_a) {
        return invalid("context and conditioning latents differ in shape");
    }
    if alpha.len() != y_a.block_count() {
        return invalid("one weight per block is required");
    }
    let mut mu = Latent::zeros_like(y_a);
    let c = y_a.channels();
    for (b, &a) in alpha.iter().enumerate() {
        let range = b * c..(b + 1) * c;
        for ((m, &x), &r) in mu.data_mut()[range.clone()]
            .iter_mut()
            .zip(&context_pred.data()[range.clone()])
            .zip(&y_a.data()[range])
        {
            *m = fuse(a, x, r);
        }
    }
    Ok(mu)
}

/// The per-element fusion rule shared by encoder and decoder.
#[inline]
pub fn fuse(alpha: f64, context: f64, reference: f64) -> f64 {
    alpha * context + (1.0 - alpha) * reference
}

/// Encoder side: match, align and weight. `y_a` is rebuilt through
/// [`synthesize_conditioning`] so it is exactly what the decoder computes.
pub fn build_conditioning(
    y: &Latent,
    refs: &[Latent],
    window: usize,
    tau: f64,
    align: bool,
    w0: f64,
    w1: f64,
) -> Result<ConditioningLatent> {
    let (_, mut records) = clm_match(y, refs, window, tau)?;
    clm_align(y, refs, &mut records, window, align)?;
    cls_weights(&mut records, w0, w1);
    synthesize_conditioning(y, refs, &records, window)
}

/// Decoder side: rebuild `y_a` and α from references and records alone.
pub fn synthesize_conditioning(
    shape: &Latent,
    refs: &[Latent],
    records: &[MatchRecord],
    window: usize,
) -> Result<ConditioningLatent> {
    let bad = |msg: &str| Err(ClcError::MalformedBitstream(msg.into()));
    if records.len() != shape.block_count() {
        return bad("record count does not match block count");
    }
    let w = window as i32;
    let mut latent = Latent::zeros_like(shape);
    let mut alpha = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if rec.by * shape.blocks_w() + rec.bx != i {
            return bad("records out of raster order");
        }
        if rec.dx.abs() > w || rec.dy.abs() > w {
            return bad("match offset outside the search window");
        }
        if rec.gain_code >= GAIN_LEVELS || rec.alpha_code >= ALPHA_LEVELS {
            return bad("gain or alpha code out of range");
        }
        let Some(r) = refs.get(rec.ref_index) else {
            return bad("record names a missing reference");
        };
        if r.planes() != shape.planes() || r.patch() != shape.patch() {
            return bad("reference latent layout differs from the target");
        }
        let (ry, rx) = ref_block(r, rec.by, rec.bx, rec.dy, rec.dx);
        let g = rec.gain();
        for (dst, &c) in latent.block_mut(rec.by, rec.bx).iter_mut().zip(r.block(ry, rx)) {
            *dst = g * c;
        }
        alpha.push(rec.alpha());
    }
    Ok(ConditioningLatent {
        latent,
        records: records.to_vec(),
        alpha,
        ref_count: refs.len(),
    })
}

/// Bits used by the reference index field.
pub fn ref_index_bits(m: usize) -> u32 {
    if m > 4 {
        3
    } else {
        2
    }
}

/// Packs records MSB-first: ref index, dx+w, dy+w (3 bits each), gain (6),
/// alpha (4); each block row starts on a byte boundary.
pub fn pack_records(records: &[MatchRecord], blocks_w: usize, m: usize, window: usize) -> Vec<u8> {
    let mut w = BitWriter::default();
    let rb = ref_index_bits(m);
    for (i, r) in records.iter().enumerate() {
        if i > 0 && i % blocks_w == 0 {
            w.align();
        }
        w.put(r.ref_index as u32, rb);
        w.put((r.dx + window as i32) as u32, 3);
        w.put((r.dy + window as i32) as u32, 3);
        w.put(r.gain_code as u32, 6);
        w.put(r.alpha_code as u32, 4);
    }
    w.finish()
}

pub fn unpack_records(
    bytes: &[u8],
    blocks_w: usize,
    blocks_h: usize,
    m: usize,
    window: usize,
) -> Result<Vec<MatchRecord>> {
    let expected = packed_records_len(blocks_w, blocks_h, m);
    if bytes.len() != expected {
        return Err(ClcError::MalformedBitstream(format!(
            "record section is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut r = BitReader { bytes, pos: 0 };
    let rb = ref_index_bits(m);
    let mut out = Vec::with_capacity(blocks_w * blocks_h);
    for by in 0..blocks_h {
        r.align();
        for bx in 0..blocks_w {
            let ref_index = r.get(rb) as usize;
            let dx = r.get(3) as i32 - window as i32;
            let dy = r.get(3) as i32 - window as i32;
            let gain_code = r.get(6) as u8;
            let alpha_code = r.get(4) as u8;
            if ref_index >= m {
                return Err(ClcError::MalformedBitstream(format!(
                    "reference index {ref_index} with only {m} references"
                )));
            }
            out.push(MatchRecord {
                bx,
                by,
                ref_index,
                dx,
                dy,
                score: 0.0,
                gain_code,
                alpha_code,
            });
        }
    }
    Ok(out)
}

pub fn record_bits_per_block(m: usize) -> usize {
    ref_index_bits(m) as usize + 3 + 3 + 6 + 4
}

pub fn packed_records_len(blocks_w: usize, blocks_h: usize, m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    (blocks_w * record_bits_per_block(m)).div_ceil(8) * blocks_h
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    n: u32,
}

impl BitWriter {
    fn put(&mut self, v: u32, bits: u32) {
        self.acc = (self.acc << bits) | (v as u64 & ((1 << bits) - 1));
        self.n += bits;
        while self.n >= 8 {
            self.n -= 8;
            self.bytes.push((self.acc >> self.n) as u8);
        }
    }

    fn align(&mut self) {
        if self.n > 0 {
            self.put(0, 8 - self.n);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        self.align();
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn get(&mut self, bits: u32) -> u32 {
        let mut v = 0;
        for _ in 0..bits {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        v
    }

    fn align(&mut self) {
        self.pos = self.pos.div_ceil(8) * 8;
    }
}
