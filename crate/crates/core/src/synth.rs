//! Seeded synthetic test images with natural-image-like statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Number of flat or textured shapes painted over the background.
    pub shapes: usize,
    /// Amplitude of the multi-octave value noise.
    pub texture: f64,
    /// Standard deviation of per-pixel sensor noise.
    pub noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            shapes: 12,
            texture: 18.0,
            noise: 2.0,
        }
    }
}

/// Bilinearly interpolated random lattice with cell size `cell`.
fn value_noise(w: usize, h: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let gy = y / cell;
        let ty = (y % cell) as f64 / cell as f64;
        for x in 0..w {
            let gx = x / cell;
            let tx = (x % cell) as f64 / cell as f64;
            let g = |i: usize, j: usize| grid[(gy + j) * gw + gx + i];
            let top = g(0, 0) * (1.0 - tx) + g(1, 0) * tx;
            let bot = g(0, 1) * (1.0 - tx) + g(1, 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Smooth gradients, sinusoids, painted shapes with occasional stripe
/// texture, 1/f-like value noise and sensor noise.
pub fn natural_image(w: usize, h: usize, channels: usize, seed: u64, params: &SceneParams) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = w * h;
    let mut luma = vec![0.0; n];
    let base = rng.random_range(70.0..180.0);
    let (gx, gy) = (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let f = rng.random_range(0.005..0.04);
            (f * th.cos(), f * th.sin(), rng.random_range(5.0..25.0), rng.random_range(0.0..6.3))
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut v = base + gx * (x as f64 - w as f64 / 2.0) + gy * (y as f64 - h as f64 / 2.0);
            for &(fx, fy, a, ph) in &waves {
                v += a * (fx * x as f64 + fy * y as f64 + ph).sin();
            }
            luma[y * w + x] = v;
        }
    }
    let mut chroma = vec![[0.0f64; 3]; n];
    let scale = (w.min(h) as f64).max(8.0);
    for _ in 0..params.shapes {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let rx = rng.random_range(0.05..0.35) * scale;
        let ry = rng.random_range(0.05..0.35) * scale;
        let level = rng.random_range(20.0..235.0);
        let tint = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
        let ellipse = rng.random_bool(0.5);
        let stripes = if rng.random_bool(0.3) {
            Some((rng.random_range(0.2..0.9), rng.random_range(0.0..3.2), rng.random_range(6.0..20.0)))
        } else {
            None
        };
        let x0 = (cx - rx).max(0.0) as usize;
        let x1 = ((cx + rx).ceil() as usize).min(w);
        let y0 = (cy - ry).max(0.0) as usize;
        let y1 = ((cy + ry).ceil() as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                if ellipse && dx * dx + dy * dy > 1.0 {
                    continue;
                }
                let mut v = level;
                if let Some((f, th, a)) = stripes {
                    v += a * (f * (x as f64 * f64::cos(th) + y as f64 * f64::sin(th))).sin();
                }
                luma[y * w + x] = v;
                chroma[y * w + x] = tint;
            }
        }
    }
    let mut cell = 32;
    let mut amp = params.texture;
    while cell >= 2 {
        let nz = value_noise(w, h, cell, &mut rng);
        for (l, z) in luma.iter_mut().zip(nz) {
            *l += amp * z;
        }
        cell /= 2;
        amp *= 0.6;
    }
    let normal = Normal::new(0.0, params.noise.max(1e-9)).expect("finite noise");
    let mut data = Vec::with_capacity(n * channels);
    for i in 0..n {
        for c in 0..channels {
            let mut v = luma[i] + normal.sample(&mut rng);
            if channels == 3 {
                v += chroma[i][c];
            }
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(w, h, channels, data).expect("consistent dimensions")
}

/// Independent uniform samples.
pub fn random_image(w: usize, h: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * channels).map(|_| rng.random()).collect();
    Image::new(w, h, channels, data).expect("consistent dimensions")
}

/// Copy of `image` with sensor noise of standard deviation `sigma` added;
/// a stand-in for a second capture of the same scene.
pub fn recapture(image: &Image, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(1e-9)).expect("finite sigma");
    let data = image
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(image.width(), image.height(), image.channels(), data).expect("same shape")
}
