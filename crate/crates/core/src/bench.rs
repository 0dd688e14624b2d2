//! Rate-distortion sweeps and the synthetic corpora used by benchmarks.

use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{compress, decompress, CodecConfig};
use crate::dictionary::{BallTree, Dictionary, KvCache, TaggedPatch, DEFAULT_CAPACITY};
use crate::error::{invalid, ClcError, Result};
use crate::image::Image;
use crate::metrics::{RdCurve, RdPoint};
use crate::synth::{natural_image, recapture, SceneParams};

pub const DEFAULT_STEPS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Fusion weights with α falling as the match score rises.
pub const ADAPTIVE_W0: f64 = 0.0;
pub const ADAPTIVE_W1: f64 = -10.0;

/// Dictionary patches plus the images to code against them.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub patches: Vec<TaggedPatch>,
    pub inputs: Vec<Image>,
}

/// `sources` synthetic scenes of `2·tile` square, each cut into four
/// dictionary tiles; inputs are noisy re-captures of tiles shifted by one
/// or two 16-pixel blocks, so every input's source tile is in the
/// dictionary.
pub fn correlated_corpus(sources: usize, tile: usize, channels: usize, seed: u64) -> Corpus {
    let params = SceneParams::default();
    let mut patches = Vec::new();
    let mut inputs = Vec::new();
    for s in 0..sources {
        let scene = natural_image(2 * tile, 2 * tile, channels, seed.wrapping_mul(1000).wrapping_add(s as u64), &params);
        for (t, p) in scene.tiles(tile).into_iter().enumerate() {
            patches.push(TaggedPatch::new(p, format!("scene{s}/tile{t}")));
        }
        let dx = 16 * (1 + s % 2);
        let dy = 16 * (1 + (s / 2) % 2);
        let crop = scene.crop(dx, dy, tile, tile).expect("shift stays inside the scene");
        inputs.push(recapture(&crop, 2.0, seed ^ (0xA5A5 + s as u64)));
    }
    Corpus { patches, inputs }
}

/// Dictionary tiles and inputs drawn from unrelated scenes.
pub fn uncorrelated_corpus(sources: usize, inputs: usize, tile: usize, channels: usize, seed: u64) -> Corpus {
    let params = SceneParams::default();
    let mut patches = Vec::new();
    for s in 0..sources {
        let scene = natural_image(2 * tile, 2 * tile, channels, seed.wrapping_mul(1000).wrapping_add(500 + s as u64), &params);
        for (t, p) in scene.tiles(tile).into_iter().enumerate() {
            patches.push(TaggedPatch::new(p, format!("other{s}/tile{t}")));
        }
    }
    let inputs = (0..inputs)
        .map(|i| natural_image(tile, tile, channels, seed.wrapping_mul(1000).wrapping_add(900 + i as u64), &params))
        .collect();
    Corpus { patches, inputs }
}

/// Averages over a set of images at one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub step: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub side_info_bpp: f64,
    pub estimated_bpp: f64,
    pub encode_ms: f64,
    pub decode_ms: f64,
    /// Every stream decoded to the encoder's reconstruction.
    pub round_trip_ok: bool,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    /// Per step, the concatenated bitstreams of all images.
    pub streams: Vec<Vec<Vec<u8>>>,
}

impl Sweep {
    pub fn curve(&self, tag: &str) -> Result<RdCurve> {
        RdCurve::new(
            self.points
                .iter()
                .map(|p| RdPoint::new(p.bpp, p.psnr, format!("{tag} step={}", p.step)))
                .collect(),
        )
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Codes every image at every step. With `use_cache`, retrieval goes
/// through one shared KV cache (images are then coded in order).
pub fn rd_sweep(
    images: &[Image],
    dict: &Dictionary,
    tree: &BallTree,
    cfg: &CodecConfig,
    steps: &[f64],
    use_cache: bool,
) -> Result<Sweep> {
    if images.is_empty() {
        return invalid("sweep needs at least one image");
    }
    let mut points = Vec::with_capacity(steps.len());
    let mut streams = Vec::with_capacity(steps.len());
    let mut cache = KvCache::new(DEFAULT_CAPACITY, dict.feature_dim(), dict.feature_dim())?;
    for &step in steps {
        let step_cfg = CodecConfig { step, ..cfg.clone() };
        let run = |im: &Image, cache: Option<&mut KvCache>| -> Result<(f64, f64, f64, f64, f64, f64, bool, Vec<u8>)> {
            let enc = compress(im, dict, tree, cache, &step_cfg)?;
            let t = std::time::Instant::now();
            let dec = decompress(&enc.bytes, dict)?;
            let dt = t.elapsed();
            let s = &enc.stats;
            Ok((
                s.bpp(),
                s.psnr,
                s.side_info_bpp(),
                s.estimated_bpp(),
                ms(s.elapsed),
                ms(dt),
                dec == enc.reconstruction,
                enc.bytes,
            ))
        };
        let results = if use_cache {
            images.iter().map(|im| run(im, Some(&mut cache))).collect::<Result<Vec<_>>>()?
        } else {
            images.par_iter().map(|im| run(im, None)).collect::<Result<Vec<_>>>()?
        };
        let k = results.len() as f64;
        let avg = |f: fn(&(f64, f64, f64, f64, f64, f64, bool, Vec<u8>)) -> f64| results.iter().map(f).sum::<f64>() / k;
        if results.iter().any(|r| r.1.is_infinite()) {
            return Err(ClcError::InvalidArgument(format!("lossless result at step {step}; PSNR is unbounded")));
        }
        points.push(SweepPoint {
            step,
            bpp: avg(|r| r.0),
            psnr: avg(|r| r.1),
            side_info_bpp: avg(|r| r.2),
            estimated_bpp: avg(|r| r.3),
            encode_ms: avg(|r| r.4),
            decode_ms: avg(|r| r.5),
            round_trip_ok: results.iter().all(|r| r.6),
        });
        streams.push(results.into_iter().map(|r| r.7).collect());
    }
    Ok(Sweep { points, streams })
}
