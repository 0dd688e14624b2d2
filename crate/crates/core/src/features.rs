//! Hand-crafted patch descriptors: a fixed 12-band filter bank followed by
//! spatial pyramid mean pooling at 1×1, 2×2 and 4×4.

use crate::error::{invalid, Result};
use crate::image::ImagePatch;
use crate::numerics::{l2_norm, pca_project, PcaBasis};

pub const BANDS: usize = 12;
pub const PYRAMID: [usize; 3] = [1, 2, 4];
/// `BANDS · (1 + 4 + 16)`
pub const RAW_DIM: usize = 252;
pub const MIN_PATCH: usize = 16;

/// Filter responses, band-major (`data[band][y][x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub bands: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub data: Vec<f64>,
    pub normalized: bool,
}

impl FeatureVector {
    /// Scales to unit L2 norm; an all-zero vector is left as is and flagged
    /// as not normalized.
    pub fn normalize(data: Vec<f64>) -> Self {
        let norm = l2_norm(&data);
        if norm > 0.0 {
            Self {
                data: data.into_iter().map(|v| v / norm).collect(),
                normalized: true,
            }
        } else {
            Self {
                data,
                normalized: false,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

struct Plane<'a> {
    w: usize,
    h: usize,
    v: &'a [f64],
}

impl Plane<'_> {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }
}

/// Mean over a `(2r+1)²` window clipped to the image, via an integral image.
fn box_mean(v: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    // sums run over offsets from the first sample so flat regions stay exact
    let base = v[0];
    let mut integral = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += v[y * w + x] - base;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let sum = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            out[y * w + x] = base + sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

fn gradient_magnitude(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let p = Plane { w, h, v };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 0.5 * (p.at(x + 1, y) - p.at(x - 1, y));
            let gy = 0.5 * (p.at(x, y + 1) - p.at(x, y - 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Computes the 12 filter-bank bands on the luma of `patch`:
/// intensity, |∂x|, |∂y|, gradient magnitude at two blur scales, edge
/// energy at 0°/45°/90°/135°, local variance, |Laplacian| and a coarse
/// local mean.
pub fn filter_bank(patch: &ImagePatch) -> Result<FeatureMap> {
    let (w, h) = (patch.width(), patch.height());
    if w < MIN_PATCH || h < MIN_PATCH {
        return invalid(format!("patch {w}x{h} is smaller than {MIN_PATCH}x{MIN_PATCH}"));
    }
    let g = patch.luma_unit();
    let n = w * h;
    let mut data = Vec::with_capacity(BANDS * n);

    let gp = Plane { w, h, v: &g };
    data.extend_from_slice(&g);
    for y in 0..h as isize {
        for x in 0..w as isize {
            data.push((0.5 * (gp.at(x + 1, y) - gp.at(x - 1, y))).abs());
        }
    }
    for y in 0..h as isize {
        for x in 0..w as isize {
            data.push((0.5 * (gp.at(x, y + 1) - gp.at(x, y - 1))).abs());
        }
    }

    let fine = box_mean(&g, w, h, 1);
    let coarse = box_mean(&g, w, h, 3);
    data.extend(gradient_magnitude(&fine, w, h));
    data.extend(gradient_magnitude(&coarse, w, h));

    let fp = Plane { w, h, v: &fine };
    for (ux, uy) in [(1isize, 0isize), (1, 1), (0, 1), (-1, 1)] {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let d = 0.5 * (fp.at(x + ux, y + uy) - fp.at(x - ux, y - uy));
                data.push(d * d);
            }
        }
    }

    let mean = box_mean(&g, w, h, 2);
    let sq: Vec<f64> = g.iter().map(|v| v * v).collect();
    let mean_sq = box_mean(&sq, w, h, 2);
    data.extend(mean.iter().zip(&mean_sq).map(|(m, s)| (s - m * m).max(0.0)));

    for y in 0..h as isize {
        for x in 0..w as isize {
            let lap = gp.at(x - 1, y) + gp.at(x + 1, y) + gp.at(x, y - 1) + gp.at(x, y + 1)
                - 4.0 * gp.at(x, y);
            data.push(lap.abs());
        }
    }

    data.extend(box_mean(&g, w, h, 8));
    debug_assert_eq!(data.len(), BANDS * n);
    Ok(FeatureMap {
        bands: BANDS,
        width: w,
        height: h,
        data,
    })
}

/// Pyramid mean pooling without normalization. Layout: scale-major, then
/// row-major cells, then band.
pub fn spp_pool_raw(map: &FeatureMap) -> Result<Vec<f64>> {
    let finest = *PYRAMID.last().unwrap();
    if map.width < finest || map.height < finest {
        return invalid(format!(
            "feature map {}x{} too small for {finest}x{finest} pooling",
            map.width, map.height
        ));
    }
    let (w, h) = (map.width, map.height);
    let cells: usize = PYRAMID.iter().map(|s| s * s).sum();
    let mut out = Vec::with_capacity(map.bands * cells);
    for &s in &PYRAMID {
        for cy in 0..s {
            let (y0, y1) = (cy * h / s, (cy + 1) * h / s);
            for cx in 0..s {
                let (x0, x1) = (cx * w / s, (cx + 1) * w / s);
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                for b in 0..map.bands {
                    let band = map.band(b);
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        sum += band[y * w + x0..y * w + x1].iter().sum::<f64>();
                    }
                    out.push(sum / count);
                }
            }
        }
    }
    Ok(out)
}

pub fn spp_pool(map: &FeatureMap) -> Result<FeatureVector> {
    Ok(FeatureVector::normalize(spp_pool_raw(map)?))
}

/// Filter bank → pyramid pooling → optional PCA projection → L2 normalization.
pub fn extract_feature(patch: &ImagePatch, pca: Option<&PcaBasis>) -> Result<FeatureVector> {
    let pooled = spp_pool(&filter_bank(patch)?)?;
    match pca {
        None => Ok(pooled),
        Some(basis) => {
            if basis.input_dim() != RAW_DIM {
                return invalid(format!(
                    "PCA input dim {} does not match feature dim {RAW_DIM}",
                    basis.input_dim()
                ));
            }
            Ok(FeatureVector::normalize(pca_project(basis, &pooled.data)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::numerics::Matrix;

    fn band_is_zero(map: &FeatureMap, b: usize) -> bool {
        map.band(b).iter().all(|v| v.abs() < 1e-15)
    }

    #[test]
    fn flat_patch_has_no_structure() {
        let img = Image::filled(20, 18, 3, 90).unwrap();
        let map = filter_bank(&img).unwrap();
        assert_eq!((map.width, map.height, map.bands), (20, 18, 12));
        for b in 1..=10 {
            assert!(band_is_zero(&map, b), "band {b}");
        }
        assert!(!band_is_zero(&map, 0));
        assert!(!band_is_zero(&map, 11));
    }

    #[test]
    fn vertical_edge_is_orientation_selective() {
        let img = Image::from_fn(32, 32, 1, |x, _, _| if x < 16 { 10 } else { 240 }).unwrap();
        let map = filter_bank(&img).unwrap();
        assert!(map.band(1).iter().sum::<f64>() > 1.0);
        assert!(band_is_zero(&map, 2));
        assert_eq!(filter_bank(&img).unwrap(), map);
    }

    #[test]
    fn rejects_small_patches() {
        let img = Image::filled(15, 40, 1, 0).unwrap();
        assert!(filter_bank(&img).is_err());
        let map = FeatureMap {
            bands: 1,
            width: 3,
            height: 8,
            data: vec![0.0; 24],
        };
        assert!(spp_pool(&map).is_err());
    }

    #[test]
    fn pooling_by_hand() {
        let values: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let map = FeatureMap {
            bands: 1,
            width: 4,
            height: 4,
            data: values.clone(),
        };
        let pooled = spp_pool_raw(&map).unwrap();
        assert_eq!(pooled.len(), 21);
        assert_eq!(pooled[0], 7.5);
        // 2x2 cells: top-left holds 0,1,4,5
        assert_eq!(&pooled[1..5], &[2.5, 4.5, 10.5, 12.5]);
        assert_eq!(&pooled[5..], values.as_slice());

        let flat = FeatureMap {
            bands: 2,
            width: 8,
            height: 8,
            data: vec![0.25; 128],
        };
        let pooled = spp_pool_raw(&flat).unwrap();
        assert!(pooled.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn global_cell_is_band_mean() {
        let img = Image::from_fn(37, 29, 3, |x, y, c| ((x * 7 + y * 13 + c * 50) % 256) as u8).unwrap();
        let map = filter_bank(&img).unwrap();
        let pooled = spp_pool_raw(&map).unwrap();
        for b in 0..BANDS {
            let mean = map.band(b).iter().sum::<f64>() / (37.0 * 29.0);
            assert!((pooled[b] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn extraction_shapes_and_norms() {
        let img = Image::from_fn(48, 40, 3, |x, y, c| ((x * x + 3 * y + c) % 251) as u8).unwrap();
        let raw = extract_feature(&img, None).unwrap();
        assert_eq!(raw.len(), RAW_DIM);
        assert!((l2_norm(&raw.data) - 1.0).abs() < 1e-6);
        assert_eq!(extract_feature(&img, None).unwrap(), raw);

        let mut comps = Matrix::zeros(5, RAW_DIM);
        for i in 0..5 {
            comps.set(i, i * 3, 1.0);
        }
        let basis = PcaBasis {
            mean: vec![0.0; RAW_DIM],
            components: comps,
            explained_variance: vec![1.0; 5],
        };
        let reduced = extract_feature(&img, Some(&basis)).unwrap();
        assert_eq!(reduced.len(), 5);
        assert!((l2_norm(&reduced.data) - 1.0).abs() < 1e-6);

        let wrong = PcaBasis::identity(10);
        assert!(extract_feature(&img, Some(&wrong)).is_err());
    }

    #[test]
    fn rotation_changes_descriptor() {
        // bright wedge in the top-left corner only
        let img = Image::from_fn(32, 32, 1, |x, y, _| if x + 2 * y < 24 { 250 } else { 5 }).unwrap();
        let a = extract_feature(&img, None).unwrap();
        let b = extract_feature(&img.rotate90(), None).unwrap();
        let diff: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-3);
    }
}
