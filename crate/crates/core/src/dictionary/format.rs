//! On-disk dictionary format (`CLCD`, little-endian, SHA-256 trailer).

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{BuildConfig, Dictionary, DictionaryEntry};
use crate::error::{ClcError, Result};
use crate::image::Image;
use crate::numerics::{Matrix, PcaBasis};

pub const DICT_MAGIC: [u8; 4] = *b"CLCD";
pub const DICT_VERSION: u16 = 1;

pub fn dict_to_bytes(dict: &Dictionary) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&DICT_MAGIC);
    out.extend_from_slice(&DICT_VERSION.to_le_bytes());
    put_u32(&mut out, dict.entries.len());
    put_u32(&mut out, dict.pca.output_dim());
    put_u32(&mut out, dict.pca.input_dim());
    put_f32s(&mut out, &dict.pca.mean);
    put_f32s(&mut out, dict.pca.components.data());
    put_f32s(&mut out, &dict.pca.explained_variance);
    put_u32(&mut out, dict.config.clusters);
    put_u32(&mut out, dict.config.batch_size);
    put_u32(&mut out, dict.config.iterations);
    put_u32(&mut out, dict.config.pca_dim);
    out.extend_from_slice(&dict.config.seed.to_le_bytes());
    for e in &dict.entries {
        put_u32(&mut out, e.id);
        put_f32s(&mut out, &e.key);
        out.extend_from_slice(&(e.payload.width() as u16).to_le_bytes());
        out.extend_from_slice(&(e.payload.height() as u16).to_le_bytes());
        out.push(e.payload.channels() as u8);
        out.extend_from_slice(e.payload.data());
        let tag = e.source_tag.as_bytes();
        let tag = &tag[..tag.len().min(u16::MAX as usize)];
        out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
        out.extend_from_slice(tag);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn dict_save(dict: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dict_to_bytes(dict))?;
    Ok(())
}

pub fn dict_load(path: impl AsRef<Path>) -> Result<Dictionary> {
    dict_from_bytes(&fs::read(path)?)
}

pub fn dict_from_bytes(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != DICT_MAGIC {
        return Err(ClcError::BadMagic {
            expected: DICT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != DICT_VERSION {
        return Err(ClcError::VersionMismatch {
            expected: DICT_VERSION,
            found: version,
        });
    }
    let k = r.u32()?;
    let dim = r.u32()?;
    let input_dim = r.u32()?;
    if dim == 0 || input_dim == 0 || dim > input_dim {
        return Err(ClcError::Parse(format!("bad PCA shape {dim}x{input_dim}")));
    }
    let mean = r.f32s(input_dim)?;
    let components = Matrix::new(dim, input_dim, r.f32s(dim * input_dim)?)?;
    let explained_variance = r.f32s(dim)?;
    let config = BuildConfig {
        clusters: r.u32()?,
        batch_size: r.u32()?,
        iterations: r.u32()?,
        pca_dim: r.u32()?,
        seed: r.u64()?,
    };
    let mut entries = Vec::with_capacity(k.min(1 << 16));
    for expected in 0..k {
        let id = r.u32()?;
        if id != expected {
            return Err(ClcError::Parse(format!("entry id {id} out of order")));
        }
        let key = r.f32s(dim)?;
        let w = r.u16()? as usize;
        let h = r.u16()? as usize;
        let c = r.take(1)?[0] as usize;
        let data = r.take(w * h * c)?.to_vec();
        let payload = Image::new(w, h, c, data).map_err(|e| ClcError::Parse(e.to_string()))?;
        let tag_len = r.u16()? as usize;
        let source_tag = String::from_utf8(r.take(tag_len)?.to_vec())
            .map_err(|_| ClcError::Parse("tag is not UTF-8".into()))?;
        entries.push(DictionaryEntry {
            id,
            key,
            payload,
            source_tag,
        });
    }
    let body_len = r.pos;
    let stored = r.take(32)?;
    if r.pos != bytes.len() {
        return Err(ClcError::Parse(format!(
            "{} trailing bytes after content hash",
            bytes.len() - r.pos
        )));
    }
    let digest = Sha256::digest(&bytes[..body_len]);
    if digest.as_slice() != stored {
        return Err(ClcError::HashMismatch);
    }
    let mut content_hash = [0u8; 32];
    content_hash.copy_from_slice(stored);
    Ok(Dictionary {
        entries,
        pca: PcaBasis {
            mean,
            components,
            explained_variance,
        },
        config,
        content_hash,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ClcError::Parse(format!(
                "truncated dictionary: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| ClcError::Parse("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}
