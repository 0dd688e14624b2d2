//! PSNR and Bjøntegaard deltas between rate-distortion curves.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::image::Image;

/// `10·log10(255²/MSE)` over all samples; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return invalid("PSNR needs images of identical shape");
    }
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(psnr_from_mse(sse as f64 / a.data().len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (255.0f64 * 255.0 / mse).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdPoint {
    /// Bits per pixel.
    pub rate: f64,
    /// PSNR in dB.
    pub psnr: f64,
    pub tag: String,
}

impl RdPoint {
    pub fn new(rate: f64, psnr: f64, tag: impl Into<String>) -> Self {
        Self {
            rate,
            psnr,
            tag: tag.into(),
        }
    }
}

/// At least four points, strictly increasing in rate, finite PSNR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        if points.len() < 4 {
            return invalid(format!("an RD curve needs at least 4 points, got {}", points.len()));
        }
        if points.iter().any(|p| !(p.rate > 0.0) || !p.rate.is_finite() || !p.psnr.is_finite()) {
            return invalid("RD points need positive finite rate and finite PSNR");
        }
        points.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        if points.windows(2).any(|w| w[0].rate >= w[1].rate) {
            return invalid("RD curve rates must be strictly increasing");
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate.log10()).collect()
    }

    fn psnrs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.psnr).collect()
    }
}

/// Least-squares cubic through `(x, y)`; coefficients lowest order first.
fn cubic_fit(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    // center and scale x for conditioning
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let scale = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(1e-12);
    let mut a = [[0.0; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - mean) / scale;
        let pw = [1.0, t, t * t, t * t * t];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][4] += pw[r] * yi;
        }
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[piv][col].abs() < 1e-12 {
            return invalid("RD points are degenerate for a cubic fit");
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let t: [f64; 4] = std::array::from_fn(|i| a[i][4] / a[i][i]);
    // expand p((x − mean)/scale) into powers of x
    let (m, s) = (mean, scale);
    let c3 = t[3] / (s * s * s);
    let c2 = t[2] / (s * s);
    let c1 = t[1] / s;
    Ok([
        t[0] - c1 * m + c2 * m * m - c3 * m * m * m,
        c1 - 2.0 * c2 * m + 3.0 * c3 * m * m,
        c2 - 3.0 * c3 * m,
        c3,
    ])
}

fn integral(p: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |x: f64| p[0] * x + p[1] * x * x / 2.0 + p[2] * x.powi(3) / 3.0 + p[3] * x.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min).max(b.iter().copied().fold(f64::INFINITY, f64::min));
    let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(b.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if !(hi > lo) {
        return invalid("RD curves do not overlap");
    }
    Ok((lo, hi))
}

/// Average rate difference of `test` against `anchor` at equal PSNR, in
/// percent; negative means `test` needs fewer bits.
pub fn bd_rate(test: &RdCurve, anchor: &RdCurve) -> Result<f64> {
    let (pt, pa) = (test.psnrs(), anchor.psnrs());
    let (lo, hi) = overlap(&pt, &pa)?;
    let ft = cubic_fit(&pt, &test.log_rates())?;
    let fa = cubic_fit(&pa, &anchor.log_rates())?;
    let avg = (integral(&ft, lo, hi) - integral(&fa, lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

/// Average PSNR difference of `test` against `anchor` at equal rate, in dB.
pub fn bd_psnr(test: &RdCurve, anchor: &RdCurve) -> Result<f64> {
    let (rt, ra) = (test.log_rates(), anchor.log_rates());
    let (lo, hi) = overlap(&rt, &ra)?;
    let ft = cubic_fit(&rt, &test.psnrs())?;
    let fa = cubic_fit(&ra, &anchor.psnrs())?;
    Ok((integral(&ft, lo, hi) - integral(&fa, lo, hi)) / (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(scale: f64) -> RdCurve {
        let pts = [(0.25, 30.1), (0.5, 33.0), (1.0, 36.2), (2.0, 39.0), (4.0, 42.5)];
        RdCurve::new(pts.iter().map(|&(r, q)| RdPoint::new(r * scale, q, "")).collect()).unwrap()
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(4, 4, 1, 0).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, 1, 255).unwrap();
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
        let c = Image::filled(4, 4, 1, 1).unwrap();
        assert!((psnr(&a, &c).unwrap() - 10.0 * 65025f64.log10()).abs() < 1e-12);
        assert!((psnr(&a, &c).unwrap() - 48.131).abs() < 1e-3);
        assert!(psnr(&a, &Image::filled(4, 4, 3, 0).unwrap()).is_err());
    }

    #[test]
    fn bd_rate_of_scaled_curves() {
        let anchor = curve(1.0);
        assert!(bd_rate(&anchor, &anchor).unwrap().abs() < 1e-9);
        assert!((bd_rate(&curve(0.9), &anchor).unwrap() + 10.0).abs() < 0.1);
        assert!((bd_rate(&curve(1.1), &anchor).unwrap() - 10.0).abs() < 0.1);
        let fwd = bd_rate(&curve(0.8), &anchor).unwrap();
        let back = bd_rate(&anchor, &curve(0.8)).unwrap();
        assert!((fwd + 20.0).abs() < 1e-6 && (back - 25.0).abs() < 1e-6);
        assert!(bd_psnr(&anchor, &anchor).unwrap().abs() < 1e-9);
        assert!(bd_psnr(&curve(0.5), &anchor).unwrap() > 0.0);
    }

    #[test]
    fn curve_validation() {
        let p = |r: f64| RdPoint::new(r, 30.0 + r, "");
        assert!(RdCurve::new(vec![p(1.0), p(2.0), p(3.0)]).is_err());
        assert!(RdCurve::new(vec![p(1.0), p(2.0), p(2.0), p(3.0)]).is_err());
        assert!(RdCurve::new(vec![p(0.0), p(2.0), p(2.5), p(3.0)]).is_err());
        assert!(RdCurve::new(vec![p(3.0), p(1.0), p(2.0), p(4.0)]).is_ok());
        let far = RdCurve::new(vec![
            RdPoint::new(1.0, 60.0, ""),
            RdPoint::new(2.0, 61.0, ""),
            RdPoint::new(3.0, 62.0, ""),
            RdPoint::new(4.0, 63.0, ""),
        ])
        .unwrap();
        assert!(bd_rate(&far, &curve(1.0)).is_err());
    }
}
