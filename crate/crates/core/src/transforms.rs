//! Orthonormal block-DCT analysis/synthesis and the log-RMS hyper summary.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::image::Image;

pub const DEFAULT_PATCH: usize = 16;
pub const DEFAULT_SLICES: usize = 8;
pub const HYPER_STEP: f64 = 0.25;
pub const HYPER_LOG_MIN: f64 = -8.0;
pub const HYPER_LOG_MAX: f64 = 8.0;
pub const SIGMA_MIN: f64 = 0.04;

/// Block-transform coefficients.
///
/// Channel `plane·p² + u·p + v` holds DCT coefficient `(u, v)` of a colour
/// plane. Storage is block-major: all channels of one block are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    planes: usize,
    patch: usize,
    blocks_w: usize,
    blocks_h: usize,
    /// Source image size before padding.
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros(width: usize, height: usize, planes: usize, patch: usize) -> Result<Self> {
        if width == 0 || height == 0 || planes == 0 || patch == 0 {
            return invalid("latent dimensions must be positive");
        }
        let blocks_w = width.div_ceil(patch);
        let blocks_h = height.div_ceil(patch);
        Ok(Self {
            planes,
            patch,
            blocks_w,
            blocks_h,
            width,
            height,
            data: vec![0.0; blocks_w * blocks_h * planes * patch * patch],
        })
    }

    pub fn zeros_like(other: &Latent) -> Self {
        Self {
            data: vec![0.0; other.data.len()],
            ..other.clone()
        }
    }

    #[inline]
    pub fn planes(&self) -> usize {
        self.planes
    }

    #[inline]
    pub fn patch(&self) -> usize {
        self.patch
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.planes * self.patch * self.patch
    }

    #[inline]
    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    #[inline]
    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    #[inline]
    pub fn block_count(&self) -> usize {
        self.blocks_w * self.blocks_h
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.planes == other.planes
            && self.patch == other.patch
            && self.blocks_w == other.blocks_w
            && self.blocks_h == other.blocks_h
    }

    #[inline]
    pub fn index(&self, channel: usize, by: usize, bx: usize) -> usize {
        (by * self.blocks_w + bx) * self.channels() + channel
    }

    #[inline]
    pub fn get(&self, channel: usize, by: usize, bx: usize) -> f64 {
        self.data[self.index(channel, by, bx)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, by: usize, bx: usize, v: f64) {
        let i = self.index(channel, by, bx);
        self.data[i] = v;
    }

    /// All channels of one block.
    pub fn block(&self, by: usize, bx: usize) -> &[f64] {
        let c = self.channels();
        let start = (by * self.blocks_w + bx) * c;
        &self.data[start..start + c]
    }

    pub fn block_mut(&mut self, by: usize, bx: usize) -> &mut [f64] {
        let c = self.channels();
        let start = (by * self.blocks_w + bx) * c;
        &mut self.data[start..start + c]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Orthonormal DCT-II basis, `basis[k·p + n]`.
pub fn dct_basis(p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    for k in 0..p {
        let s = if k == 0 { (1.0 / p as f64).sqrt() } else { (2.0 / p as f64).sqrt() };
        for n in 0..p {
            c[k * p + n] = s * (PI * (2 * n + 1) as f64 * k as f64 / (2 * p) as f64).cos();
        }
    }
    c
}

/// `Y = C X Cᵀ` on a row-major `p × p` block.
fn dct2(c: &[f64], p: usize, x: &[f64], out: &mut [f64], tmp: &mut [f64]) {
    // tmp = C X
    for k in 0..p {
        for j in 0..p {
            let mut acc = 0.0;
            for n in 0..p {
                acc += c[k * p + n] * x[n * p + j];
            }
            tmp[k * p + j] = acc;
        }
    }
    // out = tmp Cᵀ
    for k in 0..p {
        for l in 0..p {
            let mut acc = 0.0;
            for n in 0..p {
                acc += tmp[k * p + n] * c[l * p + n];
            }
            out[k * p + l] = acc;
        }
    }
}

/// `X = Cᵀ Y C`.
fn idct2(c: &[f64], p: usize, y: &[f64], out: &mut [f64], tmp: &mut [f64]) {
    for n in 0..p {
        for l in 0..p {
            let mut acc = 0.0;
            for k in 0..p {
                acc += c[k * p + n] * y[k * p + l];
            }
            tmp[n * p + l] = acc;
        }
    }
    for n in 0..p {
        for m in 0..p {
            let mut acc = 0.0;
            for l in 0..p {
                acc += tmp[n * p + l] * c[l * p + m];
            }
            out[n * p + m] = acc;
        }
    }
}

/// Forward transform: subtract 128 and apply a `p × p` DCT per block and
/// colour plane. Partial edge blocks are padded by edge replication.
pub fn analysis(image: &Image, p: usize) -> Result<Latent> {
    if p == 0 {
        return invalid("patch size must be positive");
    }
    let planes = image.channels();
    let mut latent = Latent::zeros(image.width(), image.height(), planes, p)?;
    let c = dct_basis(p);
    let (mut block, mut out, mut tmp) = (vec![0.0; p * p], vec![0.0; p * p], vec![0.0; p * p]);
    let (w, h) = (image.width(), image.height());
    for by in 0..latent.blocks_h {
        for bx in 0..latent.blocks_w {
            for plane in 0..planes {
                for i in 0..p {
                    let y = (by * p + i).min(h - 1);
                    for j in 0..p {
                        let x = (bx * p + j).min(w - 1);
                        block[i * p + j] = image.get(x, y, plane) as f64 - 128.0;
                    }
                }
                dct2(&c, p, &block, &mut out, &mut tmp);
                let dst = latent.block_mut(by, bx);
                dst[plane * p * p..(plane + 1) * p * p].copy_from_slice(&out);
            }
        }
    }
    Ok(latent)
}

/// Inverse transform: IDCT per block, add 128, clamp, round and crop.
pub fn synthesis(latent: &Latent) -> Result<Image> {
    let p = latent.patch;
    let planes = latent.planes;
    if planes != 1 && planes != 3 {
        return invalid(format!("cannot synthesize {planes} colour planes"));
    }
    if latent.data.len() != latent.block_count() * latent.channels() {
        return invalid("latent data does not match its shape");
    }
    let c = dct_basis(p);
    let (w, h) = (latent.width, latent.height);
    let mut data = vec![0u8; w * h * planes];
    let (mut out, mut tmp) = (vec![0.0; p * p], vec![0.0; p * p]);
    for by in 0..latent.blocks_h {
        for bx in 0..latent.blocks_w {
            let src = latent.block(by, bx);
            for plane in 0..planes {
                idct2(&c, p, &src[plane * p * p..(plane + 1) * p * p], &mut out, &mut tmp);
                for i in 0..p {
                    let y = by * p + i;
                    if y >= h {
                        break;
                    }
                    for j in 0..p {
                        let x = bx * p + j;
                        if x >= w {
                            break;
                        }
                        let v = (out[i * p + j] + 128.0).clamp(0.0, 255.0).round();
                        data[(y * w + x) * planes + plane] = v as u8;
                    }
                }
            }
        }
    }
    Image::new(w, h, planes, data)
}

/// Zig-zag scan of a `p × p` block as coefficient indices `u·p + v`.
pub fn zigzag(p: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(p * p);
    for s in 0..(2 * p - 1) {
        let lo = s.saturating_sub(p - 1);
        let hi = s.min(p - 1);
        if s % 2 == 0 {
            // moving up-right: u decreasing
            for u in (lo..=hi).rev() {
                order.push(u * p + (s - u));
            }
        } else {
            for u in lo..=hi {
                order.push(u * p + (s - u));
            }
        }
    }
    order
}

/// Assignment of block coefficients to `K` ordered slices (contiguous runs
/// of the zig-zag scan, low frequencies first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceSchedule {
    patch: usize,
    slices: Vec<Vec<usize>>,
    slice_of: Vec<usize>,
}

impl SliceSchedule {
    pub fn new(patch: usize, k: usize) -> Result<Self> {
        let n = patch * patch;
        if k == 0 || k > n {
            return invalid(format!("slice count {k} must be in 1..={n}"));
        }
        let mut slices = vec![Vec::new(); k];
        let mut slice_of = vec![0; n];
        for (pos, coef) in zigzag(patch).into_iter().enumerate() {
            let s = pos * k / n;
            slices[s].push(coef);
            slice_of[coef] = s;
        }
        Ok(Self {
            patch,
            slices,
            slice_of,
        })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Coefficients of slice `s` in zig-zag order.
    pub fn slice(&self, s: usize) -> &[usize] {
        &self.slices[s]
    }

    pub fn slice_of(&self, coef: usize) -> usize {
        self.slice_of[coef]
    }
}

/// Quantized per-(plane, slice, block) log₂-RMS codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperLatent {
    planes: usize,
    groups: usize,
    blocks_w: usize,
    blocks_h: usize,
    codes: Vec<i16>,
}

impl HyperLatent {
    pub fn new(planes: usize, groups: usize, blocks_w: usize, blocks_h: usize, codes: Vec<i16>) -> Result<Self> {
        if codes.len() != planes * groups * blocks_w * blocks_h {
            return invalid("hyper code count does not match its shape");
        }
        Ok(Self {
            planes,
            groups,
            blocks_w,
            blocks_h,
            codes,
        })
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    /// Codes ordered plane → group → block row → block column.
    pub fn codes(&self) -> &[i16] {
        &self.codes
    }

    #[inline]
    pub fn index(&self, plane: usize, group: usize, by: usize, bx: usize) -> usize {
        ((plane * self.groups + group) * self.blocks_h + by) * self.blocks_w + bx
    }

    #[inline]
    pub fn code(&self, plane: usize, group: usize, by: usize, bx: usize) -> i16 {
        self.codes[self.index(plane, group, by, bx)]
    }
}

/// Hyper code for a group RMS: `round(clamp(log₂ rms, −8, 8) / 0.25)`.
pub fn hyper_code(rms: f64) -> i16 {
    let l = if rms > 0.0 { rms.log2() } else { HYPER_LOG_MIN };
    (l.clamp(HYPER_LOG_MIN, HYPER_LOG_MAX) / HYPER_STEP).round() as i16
}

pub fn hyper_sigma(code: i16) -> f64 {
    (code as f64 * HYPER_STEP).exp2().max(SIGMA_MIN)
}

pub fn hyper_analysis(latent: &Latent, schedule: &SliceSchedule) -> Result<HyperLatent> {
    let p = latent.patch;
    if schedule.patch() != p {
        return invalid("slice schedule patch size does not match the latent");
    }
    let k = schedule.len();
    let (bw, bh) = (latent.blocks_w, latent.blocks_h);
    let mut codes = vec![0i16; latent.planes * k * bw * bh];
    for plane in 0..latent.planes {
        for g in 0..k {
            let coefs = schedule.slice(g);
            for by in 0..bh {
                for bx in 0..bw {
                    let block = latent.block(by, bx);
                    let energy: f64 = coefs
                        .iter()
                        .map(|&c| block[plane * p * p + c].powi(2))
                        .sum();
                    let rms = (energy / coefs.len() as f64).sqrt();
                    codes[((plane * k + g) * bh + by) * bw + bx] = hyper_code(rms);
                }
            }
        }
    }
    HyperLatent::new(latent.planes, k, bw, bh, codes)
}

/// Scale map in the hyper layout (`σ = max(2^(code/4), 0.04)`).
pub fn hyper_synthesis(hyper: &HyperLatent) -> Vec<f64> {
    hyper.codes.iter().map(|&c| hyper_sigma(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, c: usize) -> Image {
        Image::from_fn(w, h, c, |x, y, ch| ((x * 31 + y * 17 + ch * 77 + x * y) % 256) as u8).unwrap()
    }

    #[test]
    fn centered_constant_is_zero() {
        let l = analysis(&Image::filled(32, 32, 3, 128).unwrap(), 16).unwrap();
        assert!(l.data().iter().all(|&v| v.abs() < 1e-12));
        let back = synthesis(&Latent::zeros(20, 12, 1, 8).unwrap()).unwrap();
        assert!(back.data().iter().all(|&v| v == 128));
    }

    #[test]
    fn constant_block_has_only_dc() {
        let l = analysis(&Image::filled(8, 8, 1, 200).unwrap(), 8).unwrap();
        assert!((l.get(0, 0, 0) - 72.0 * 8.0).abs() < 1e-9);
        for ch in 1..64 {
            assert!(l.get(ch, 0, 0).abs() < 1e-9);
        }
        let mut z = Latent::zeros(16, 8, 1, 8).unwrap();
        z.set(0, 0, 1, (37.0 - 128.0) * 8.0);
        let img = synthesis(&z).unwrap();
        assert!((0..8).all(|y| (0..8).all(|x| img.get(x + 8, y, 0) == 37 && img.get(x, y, 0) == 128)));
    }

    #[test]
    fn parseval_and_exact_reconstruction() {
        for (w, h, c, p) in [(32, 32, 3, 16), (37, 21, 1, 8), (64, 48, 3, 16), (5, 9, 1, 4)] {
            let img = pattern(w, h, c);
            let l = analysis(&img, p).unwrap();
            assert_eq!(synthesis(&l).unwrap(), img);
            if w % p == 0 && h % p == 0 {
                let centered: f64 = img.data().iter().map(|&v| (v as f64 - 128.0).powi(2)).sum();
                assert!((l.norm() - centered.sqrt()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zigzag_is_a_permutation_starting_low() {
        let z = zigzag(4);
        assert_eq!(&z[..6], &[0, 1, 4, 8, 5, 2]);
        let mut sorted = zigzag(16);
        sorted.sort();
        assert_eq!(sorted, (0..256).collect::<Vec<_>>());
        let s = SliceSchedule::new(16, 8).unwrap();
        assert!((0..8).all(|i| s.slice(i).len() == 32));
        assert_eq!(s.slice_of(0), 0);
        assert_eq!(s.slice_of(255), 7);
    }

    #[test]
    fn hyper_codes() {
        assert_eq!(hyper_code(0.0), -32);
        assert_eq!(hyper_code(1.0), 0);
        assert_eq!(hyper_code(2.0), 4);
        assert_eq!(hyper_code(1e9), 32);
        assert_eq!(hyper_sigma(0), 1.0);
        assert_eq!(hyper_sigma(-32), SIGMA_MIN);
        let img = pattern(32, 32, 3);
        let l = analysis(&img, 16).unwrap();
        let sched = SliceSchedule::new(16, 8).unwrap();
        let hyper = hyper_analysis(&l, &sched).unwrap();
        let sigma = hyper_synthesis(&hyper);
        // one quantization step in the log domain
        for plane in 0..3 {
            for g in 0..8 {
                let coefs = sched.slice(g);
                let e: f64 = coefs.iter().map(|&c| l.get(plane * 256 + c, 1, 0).powi(2)).sum();
                let rms = (e / coefs.len() as f64).sqrt();
                let s = sigma[hyper.index(plane, g, 1, 0)];
                assert!((s.log2() - rms.log2()).abs() <= HYPER_STEP);
            }
        }
        let zero = hyper_analysis(&Latent::zeros(16, 16, 1, 16).unwrap(), &sched).unwrap();
        assert!(zero.codes().iter().all(|&c| c == -32));
    }
}
