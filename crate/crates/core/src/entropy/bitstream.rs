//! Container layout for compressed images.

use crate::error::{ClcError, Result};

pub const STREAM_MAGIC: [u8; 4] = *b"CLCB";
pub const STREAM_VERSION: u16 = 1;

/// Everything the decoder needs before the payload sections.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub patch: u8,
    pub slices: u8,
    pub step: f32,
    pub window: u8,
    pub w0: f32,
    pub w1: f32,
    pub dict_hash: [u8; 32],
    pub ref_ids: Vec<u32>,
}

/// A parsed container: header plus raw sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub header: StreamHeader,
    pub records: Vec<u8>,
    pub hyper: Vec<u8>,
    pub slices: Vec<Vec<u8>>,
}

/// Bytes taken by the header and all length prefixes for `m` references
/// and `k` slices.
pub fn framing_bytes(m: usize, k: usize) -> usize {
    4 + 2 + 4 + 4 + 1 + 1 + 1 + 1 + 4 + 1 + 4 + 4 + 32 + 1 + 4 * m + 4 + 4 + 4 * k
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let payload: usize = self.records.len() + self.hyper.len() + self.slices.iter().map(Vec::len).sum::<usize>();
        let mut out = Vec::with_capacity(framing_bytes(h.ref_ids.len(), self.slices.len()) + payload);
        out.extend_from_slice(&STREAM_MAGIC);
        out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.push(h.channels);
        out.push(h.patch);
        out.push(h.ref_ids.len() as u8);
        out.push(h.slices);
        out.extend_from_slice(&h.step.to_le_bytes());
        out.push(h.window);
        out.extend_from_slice(&h.w0.to_le_bytes());
        out.extend_from_slice(&h.w1.to_le_bytes());
        out.extend_from_slice(&h.dict_hash);
        out.push(h.ref_ids.len() as u8);
        for id in &h.ref_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for section in [&self.records, &self.hyper].into_iter().chain(&self.slices) {
            out.extend_from_slice(&(section.len() as u32).to_le_bytes());
            out.extend_from_slice(section);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != STREAM_MAGIC {
            return Err(ClcError::BadMagic {
                expected: STREAM_MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != STREAM_VERSION {
            return Err(ClcError::VersionMismatch {
                expected: STREAM_VERSION,
                found: version,
            });
        }
        let width = r.u32()?;
        let height = r.u32()?;
        let channels = r.u8()?;
        let patch = r.u8()?;
        let m = r.u8()?;
        let slices = r.u8()?;
        let step = r.f32()?;
        let window = r.u8()?;
        let w0 = r.f32()?;
        let w1 = r.f32()?;
        let dict_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let m2 = r.u8()?;
        if m2 != m {
            return Err(malformed("reference counts disagree"));
        }
        let ref_ids = (0..m).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let records = r.section()?;
        let hyper = r.section()?;
        let slice_data = (0..slices).map(|_| r.section()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes after the last slice"));
        }
        if width == 0 || height == 0 || !matches!(channels, 1 | 3) || patch == 0 || slices == 0 {
            return Err(malformed("degenerate image geometry"));
        }
        if !(step.is_finite() && step > 0.0) || !w0.is_finite() || !w1.is_finite() {
            return Err(malformed("non-finite coding parameters"));
        }
        Ok(Self {
            header: StreamHeader {
                width,
                height,
                channels,
                patch,
                slices,
                step,
                window,
                w0,
                w1,
                dict_hash,
                ref_ids,
            },
            records,
            hyper,
            slices: slice_data,
        })
    }
}

fn malformed(msg: &str) -> ClcError {
    ClcError::MalformedBitstream(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed("unexpected end of stream"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn section(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
}
