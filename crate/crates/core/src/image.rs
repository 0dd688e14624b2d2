//! 8-bit images and binary PPM/PGM I/O.

use std::fs;
use std::path::Path;

use crate::error::{invalid, ClcError, Result};

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

/// Patches fed to the feature extractor are plain images.
pub type ImagePatch = Image;

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return invalid(format!("unsupported channel count {channels}"));
        }
        if width == 0 || height == 0 {
            return invalid("image must not be empty");
        }
        if data.len() != width * height * channels {
            return invalid(format!(
                "{}x{}x{} image needs {} bytes, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Luma in `[0, 1]` with weights (0.299, 0.587, 0.114).
    pub fn luma_unit(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(self.channels) {
            let v = if self.channels == 1 {
                px[0] as f64
            } else {
                0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
            };
            out.push(v / 255.0);
        }
        out
    }

    /// Converts to the requested channel count (luma for RGB→gray,
    /// replication for gray→RGB).
    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        match channels {
            1 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| {
                        let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                        l.round().clamp(0.0, 255.0) as u8
                    })
                    .collect();
                Image::new(self.width, self.height, 1, data)
            }
            3 => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                Image::new(self.width, self.height, 3, data)
            }
            _ => invalid(format!("unsupported channel count {channels}")),
        }
    }

    /// Rotates 90° counter-clockwise.
    pub fn rotate90(&self) -> Image {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![0u8; self.data.len()];
        // output is h wide, w tall; out(x', y') = in(w-1-y', x')
        for yo in 0..w {
            for xo in 0..h {
                let xi = w - 1 - yo;
                let yi = xo;
                for ch in 0..c {
                    data[(yo * h + xo) * c + ch] = self.data[(yi * w + xi) * c + ch];
                }
            }
        }
        Image {
            width: h,
            height: w,
            channels: c,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return invalid("crop window exceeds image bounds");
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Image::new(width, height, c, data)
    }

    /// Non-overlapping `size × size` tiles in raster order; ragged edges dropped.
    pub fn tiles(&self, size: usize) -> Vec<Image> {
        let mut out = Vec::new();
        if size == 0 {
            return out;
        }
        for ty in 0..self.height / size {
            for tx in 0..self.width / size {
                out.push(self.crop(tx * size, ty * size, size, size).expect("tile in bounds"));
            }
        }
        out
    }
}

/// Reads a binary PPM (P6) or PGM (P5) file with maxval 255.
pub fn image_read(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path)?;
    decode_pnm(&bytes)
}

/// Writes a canonical binary PPM/PGM (`P6`/`P5`, single-space header, maxval 255).
pub fn image_write(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode_pnm(image))?;
    Ok(())
}

pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_slice() {
        b"P6" => 3,
        b"P5" => 1,
        other => {
            return Err(ClcError::Parse(format!(
                "unsupported PNM magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = parse_header_number(bytes, &mut pos)?;
    let height = parse_header_number(bytes, &mut pos)?;
    let maxval = parse_header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(ClcError::Parse(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ClcError::Parse("missing raster separator".into()));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| ClcError::Parse("image dimensions overflow".into()))?;
    if bytes.len() - pos < need {
        return Err(ClcError::Parse(format!(
            "raster truncated: need {need} bytes, have {}",
            bytes.len() - pos
        )));
    }
    Image::new(width, height, channels, bytes[pos..pos + need].to_vec())
        .map_err(|e| ClcError::Parse(e.to_string()))
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(ClcError::Parse("unexpected end of header".into()));
    }
    Ok(bytes[start..*pos].to_vec())
}

fn parse_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| ClcError::Parse(format!("bad header number {:?}", String::from_utf8_lossy(&tok))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_known_p6() {
        let mut file = b"P6\n2 2\n255\n".to_vec();
        file.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
        let img = decode_pnm(&file).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 3));
        assert_eq!(img.get(0, 0, 0), 255);
        assert_eq!(img.get(1, 0, 1), 255);
        assert_eq!(img.get(0, 1, 2), 255);
        assert_eq!(
            (img.get(1, 1, 0), img.get(1, 1, 1), img.get(1, 1, 2)),
            (10, 20, 30)
        );
        assert_eq!(encode_pnm(&img), file);
    }

    #[test]
    fn comments_and_pgm() {
        let mut file = b"P5 # gray\n# another\n3 1 255\n".to_vec();
        file.extend_from_slice(&[1, 2, 3]);
        let img = decode_pnm(&file).unwrap();
        assert_eq!(img.data(), &[1, 2, 3]);
        assert_eq!(img.channels(), 1);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut wide = b"P6\n1 1\n65535\n".to_vec();
        wide.extend_from_slice(&[0; 6]);
        assert!(matches!(decode_pnm(&wide), Err(ClcError::Parse(_))));
        assert!(decode_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_pnm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_pnm(b"P6\n").is_err());
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x * 40 + y * 7 + c) as u8).unwrap();
        let r = img.rotate90();
        assert_eq!((r.width(), r.height()), (3, 5));
        // top-right corner moves to top-left
        assert_eq!(r.get(0, 0, 0), img.get(4, 0, 0));
        assert_eq!(r.rotate90().rotate90().rotate90(), img);
    }

    #[test]
    fn tiles_and_channel_conversion() {
        let img = Image::from_fn(70, 40, 3, |x, y, _| (x + y) as u8).unwrap();
        let tiles = img.tiles(32);
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[1].get(0, 0, 0), 32);
        let gray = img.with_channels(1).unwrap();
        assert_eq!(gray.get(3, 2, 0), 5);
        assert_eq!(gray.with_channels(3).unwrap().get(3, 2, 2), 5);
    }
}
