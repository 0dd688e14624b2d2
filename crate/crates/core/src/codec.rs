//! End-to-end compression and decompression against a dictionary.

use std::time::{Duration, Instant};

use crate::conditioning::{
    build_conditioning, pack_records, synthesize_conditioning, unpack_records, ConditioningLatent,
    DEFAULT_TEMPERATURE, DEFAULT_WINDOW, MAX_REFS, MAX_WINDOW,
};
use crate::dictionary::{retrieve, BallTree, Dictionary, KvCache};
use crate::entropy::{
    decode_hyper, decode_latent, encode_hyper, encode_latent, estimate_rate, open_loop_mean, Bitstream,
    RateEstimate, StreamHeader,
};
use crate::error::{invalid, ClcError, Result};
use crate::image::Image;
use crate::metrics::psnr;
use crate::transforms::{analysis, hyper_analysis, synthesis, Latent, SliceSchedule, DEFAULT_PATCH, DEFAULT_SLICES};

pub const DEFAULT_REFS: usize = 3;
pub const DEFAULT_STEP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    /// Number of dictionary references `M`.
    pub refs: usize,
    /// Quantization step `Δ`.
    pub step: f64,
    pub window: usize,
    pub temperature: f64,
    pub alpha_w0: f64,
    pub alpha_w1: f64,
    pub patch: usize,
    pub slices: usize,
    /// Code without references (`α = 1`, `y_a = 0`).
    pub no_cond: bool,
    /// Skip offset refinement and gain fitting.
    pub no_align: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            refs: DEFAULT_REFS,
            step: DEFAULT_STEP,
            window: DEFAULT_WINDOW,
            temperature: DEFAULT_TEMPERATURE,
            alpha_w0: 0.0,
            alpha_w1: 0.0,
            patch: DEFAULT_PATCH,
            slices: DEFAULT_SLICES,
            no_cond: false,
            no_align: false,
        }
    }
}

impl CodecConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() || !((self.step as f32) > 0.0) {
            return invalid(format!("step {} must be positive and finite", self.step));
        }
        if self.window > MAX_WINDOW {
            return invalid(format!("window {} exceeds {MAX_WINDOW}", self.window));
        }
        if self.refs > MAX_REFS {
            return invalid(format!("at most {MAX_REFS} references are supported"));
        }
        if !self.alpha_w0.is_finite() || !self.alpha_w1.is_finite() {
            return invalid("fusion weights must be finite");
        }
        if self.patch == 0 || self.patch > 255 {
            return invalid("patch size must be in 1..=255");
        }
        if self.slices == 0 || self.slices > 255 || self.slices > self.patch * self.patch {
            return invalid("slice count must be in 1..=min(255, patch²)");
        }
        Ok(())
    }

    fn conditional(&self) -> bool {
        !self.no_cond && self.refs > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeStats {
    pub width: usize,
    pub height: usize,
    pub total_bits: usize,
    pub record_bits: usize,
    pub hyper_bits: usize,
    pub latent_bits: usize,
    pub estimate: RateEstimate,
    pub ref_ids: Vec<u32>,
    pub psnr: f64,
    pub elapsed: Duration,
}

impl EncodeStats {
    pub fn pixels(&self) -> f64 {
        (self.width * self.height) as f64
    }

    pub fn bpp(&self) -> f64 {
        self.total_bits as f64 / self.pixels()
    }

    /// Match records plus reference ids.
    pub fn side_info_bits(&self) -> usize {
        self.record_bits + 32 * self.ref_ids.len()
    }

    pub fn side_info_bpp(&self) -> f64 {
        self.side_info_bits() as f64 / self.pixels()
    }

    pub fn estimated_bpp(&self) -> f64 {
        self.estimate.total() / self.pixels()
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    /// What the decoder will reconstruct.
    pub reconstruction: Image,
    pub stats: EncodeStats,
}

/// Latent of dictionary entry `id`, converted to `channels` and transformed
/// with patch size `p`.
pub fn reference_latent(dict: &Dictionary, id: usize, channels: usize, p: usize) -> Result<Latent> {
    let entry = dict
        .entries
        .get(id)
        .ok_or_else(|| ClcError::InvalidArgument(format!("no dictionary entry {id}")))?;
    analysis(&entry.payload.with_channels(channels)?, p)
}

/// Analysis and conditioning for one image, before entropy coding.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub latent: Latent,
    pub cond: ConditioningLatent,
    pub ref_ids: Vec<u32>,
    pub refs: Vec<Latent>,
}

/// Transforms `image`, retrieves references and builds the conditioning.
/// With `cache`, retrieval goes through the KV cache; results do not
/// depend on it.
pub fn prepare(
    image: &Image,
    dict: &Dictionary,
    tree: &BallTree,
    cache: Option<&mut KvCache>,
    cfg: &CodecConfig,
) -> Result<Prepared> {
    cfg.validate()?;
    if image.width() > u32::MAX as usize || image.height() > u32::MAX as usize {
        return invalid("image too large for the container");
    }
    let y = analysis(image, cfg.patch)?;
    if !cfg.conditional() {
        return Ok(Prepared {
            cond: ConditioningLatent::unconditional(&y),
            latent: y,
            ref_ids: Vec::new(),
            refs: Vec::new(),
        });
    }
    if cfg.refs > dict.len() {
        return invalid(format!("{} references requested from {} entries", cfg.refs, dict.len()));
    }
    let ids = retrieve(dict, tree, cache, image, cfg.refs)?.ids();
    let refs = ids
        .iter()
        .map(|&id| reference_latent(dict, id, image.channels(), cfg.patch))
        .collect::<Result<Vec<_>>>()?;
    let cond = build_conditioning(
        &y,
        &refs,
        cfg.window,
        cfg.temperature,
        !cfg.no_align,
        cfg.alpha_w0 as f32 as f64,
        cfg.alpha_w1 as f32 as f64,
    )?;
    Ok(Prepared {
        latent: y,
        cond,
        ref_ids: ids.into_iter().map(|id| id as u32).collect(),
        refs,
    })
}

/// Entropy codes a prepared image into a bitstream.
pub fn encode_prepared(image: &Image, prep: &Prepared, dict_hash: [u8; 32], cfg: &CodecConfig) -> Result<Encoded> {
    let start = Instant::now();
    cfg.validate()?;
    let y = &prep.latent;
    let cond = &prep.cond;
    // what the decoder sees
    let step = cfg.step as f32 as f64;
    let schedule = SliceSchedule::new(cfg.patch, cfg.slices)?;

    let mu = open_loop_mean(y, cond);
    let mut resid = y.clone();
    for (r, m) in resid.data_mut().iter_mut().zip(mu.data()) {
        *r -= m;
    }
    let hyper = hyper_analysis(&resid, &schedule)?;

    let (slices, recon) = encode_latent(y, cond, &hyper, &schedule, step)?;
    let estimate = estimate_rate(y, cond, &hyper, &schedule, step)?;
    let records = if prep.ref_ids.is_empty() {
        Vec::new()
    } else {
        pack_records(&cond.records, y.blocks_w(), prep.ref_ids.len(), cfg.window)
    };
    let stream = Bitstream {
        header: StreamHeader {
            width: image.width() as u32,
            height: image.height() as u32,
            channels: image.channels() as u8,
            patch: cfg.patch as u8,
            slices: cfg.slices as u8,
            step: cfg.step as f32,
            window: cfg.window as u8,
            w0: cfg.alpha_w0 as f32,
            w1: cfg.alpha_w1 as f32,
            dict_hash,
            ref_ids: prep.ref_ids.clone(),
        },
        hyper: encode_hyper(&hyper)?,
        records,
        slices,
    };
    let bytes = stream.to_bytes();
    let reconstruction = synthesis(&recon)?;
    let stats = EncodeStats {
        width: image.width(),
        height: image.height(),
        total_bits: 8 * bytes.len(),
        record_bits: 8 * stream.records.len(),
        hyper_bits: 8 * stream.hyper.len(),
        latent_bits: 8 * stream.slices.iter().map(Vec::len).sum::<usize>(),
        estimate,
        ref_ids: prep.ref_ids.clone(),
        psnr: psnr(image, &reconstruction)?,
        elapsed: start.elapsed(),
    };
    Ok(Encoded {
        bytes,
        reconstruction,
        stats,
    })
}

/// Compresses `image` against `dict`.
pub fn compress(
    image: &Image,
    dict: &Dictionary,
    tree: &BallTree,
    cache: Option<&mut KvCache>,
    cfg: &CodecConfig,
) -> Result<Encoded> {
    let start = Instant::now();
    let prep = prepare(image, dict, tree, cache, cfg)?;
    let mut enc = encode_prepared(image, &prep, dict.content_hash, cfg)?;
    enc.stats.elapsed = start.elapsed();
    Ok(enc)
}

/// Decodes a bitstream produced by [`compress`] with the same dictionary.
pub fn decompress(bytes: &[u8], dict: &Dictionary) -> Result<Image> {
    let stream = Bitstream::from_bytes(bytes)?;
    let h = &stream.header;
    if h.dict_hash != dict.content_hash {
        return Err(ClcError::DictionaryMismatch);
    }
    let malformed = |msg: &str| ClcError::MalformedBitstream(msg.into());
    let m = h.ref_ids.len();
    if m > MAX_REFS || h.window as usize > MAX_WINDOW {
        return Err(malformed("reference count or window out of range"));
    }
    let (p, k) = (h.patch as usize, h.slices as usize);
    if k > p * p {
        return Err(malformed("more slices than coefficients"));
    }
    let channels = h.channels as usize;
    let shape = Latent::zeros(h.width as usize, h.height as usize, channels, p)
        .map_err(|e| ClcError::MalformedBitstream(e.to_string()))?;
    let schedule = SliceSchedule::new(p, k).map_err(|e| ClcError::MalformedBitstream(e.to_string()))?;
    let hyper = decode_hyper(&stream.hyper, shape.planes(), k, shape.blocks_w(), shape.blocks_h())?;

    let cond = if m == 0 {
        if !stream.records.is_empty() {
            return Err(malformed("records present without references"));
        }
        ConditioningLatent::unconditional(&shape)
    } else {
        let refs = h
            .ref_ids
            .iter()
            .map(|&id| {
                if id as usize >= dict.len() {
                    return Err(ClcError::DictionaryMismatch);
                }
                reference_latent(dict, id as usize, channels, p)
            })
            .collect::<Result<Vec<_>>>()?;
        let records = unpack_records(&stream.records, shape.blocks_w(), shape.blocks_h(), m, h.window as usize)?;
        synthesize_conditioning(&shape, &refs, &records, h.window as usize)?
    };
    let step = h.step as f64;
    let y_hat = decode_latent(&stream.slices, &shape, &cond, &hyper, &schedule, step).map_err(|e| match e {
        ClcError::InvalidArgument(msg) => ClcError::MalformedBitstream(msg),
        other => other,
    })?;
    synthesis(&y_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, BuildConfig, TaggedPatch};
    use crate::synth::{natural_image, SceneParams};

    fn small_dict(seed: u64) -> (Dictionary, BallTree, Vec<Image>) {
        let images: Vec<Image> = (0..6).map(|i| natural_image(64, 64, 3, seed * 100 + i, &SceneParams::default())).collect();
        let patches: Vec<TaggedPatch> = images.iter().enumerate().map(|(i, im)| TaggedPatch::new(im.clone(), format!("p{i}"))).collect();
        let cfg = BuildConfig {
            clusters: 6,
            pca_dim: 4,
            ..BuildConfig::default()
        };
        let dict = build_dictionary(patches, cfg).unwrap();
        let tree = dict.ball_tree().unwrap();
        (dict, tree, images)
    }

    #[test]
    fn round_trip_conditional_and_plain() {
        let (dict, tree, images) = small_dict(1);
        for no_cond in [false, true] {
            let cfg = CodecConfig {
                no_cond,
                alpha_w0: 4.0,
                alpha_w1: -8.0,
                ..CodecConfig::default()
            };
            let enc = compress(&images[2], &dict, &tree, None, &cfg).unwrap();
            let dec = decompress(&enc.bytes, &dict).unwrap();
            assert_eq!(dec, enc.reconstruction);
            assert_eq!(psnr(&images[2], &dec).unwrap(), enc.stats.psnr);
            assert_eq!(enc.stats.ref_ids.is_empty(), no_cond);
        }
    }

    #[test]
    fn self_reference_beats_no_conditioning() {
        let (dict, tree, images) = small_dict(2);
        let base = CodecConfig {
            alpha_w0: 4.0,
            alpha_w1: -8.0,
            ..CodecConfig::default()
        };
        let cond = compress(&images[0], &dict, &tree, None, &base).unwrap();
        let plain = compress(&images[0], &dict, &tree, None, &CodecConfig { no_cond: true, ..base }).unwrap();
        assert!(cond.stats.total_bits < plain.stats.total_bits);
    }

    #[test]
    fn wrong_dictionary_and_corruption() {
        let (dict, tree, images) = small_dict(3);
        let (other, _, _) = small_dict(4);
        let enc = compress(&images[1], &dict, &tree, None, &CodecConfig::default()).unwrap();
        assert!(matches!(decompress(&enc.bytes, &other), Err(ClcError::DictionaryMismatch)));
        let cut = &enc.bytes[..enc.bytes.len() - 3];
        assert!(matches!(decompress(cut, &dict), Err(ClcError::MalformedBitstream(_))));
    }

    #[test]
    fn config_validation() {
        let (dict, tree, images) = small_dict(5);
        let bad = [
            CodecConfig { step: 0.0, ..CodecConfig::default() },
            CodecConfig { window: 4, ..CodecConfig::default() },
            CodecConfig { refs: 9, ..CodecConfig::default() },
            CodecConfig { refs: 7, ..CodecConfig::default() },
            CodecConfig { slices: 0, ..CodecConfig::default() },
        ];
        for cfg in bad {
            assert!(compress(&images[0], &dict, &tree, None, &cfg).is_err(), "{cfg:?}");
        }
    }
}
