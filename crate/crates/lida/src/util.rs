//! Byte-level helpers for the binary file formats.

use std::io::Write;
use std::path::Path;

use crate::error::{CorruptKind, Error, Result};

/// Write `bytes` to `path` atomically: temp file in the same directory,
/// then rename over the target.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Cursor over an owned byte buffer with truncation-aware reads.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CorruptKind::Truncated { context }.into());
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn bytes(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        self.take(n, context)
    }

    pub fn u8(&mut self, context: &'static str) -> Result<u8> {
        Ok(self.take(1, context)?[0])
    }

    pub fn u32(&mut self, context: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, context: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    pub fn i64(&mut self, context: &'static str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, context: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    /// `count` little-endian f64 values, all required to be finite.
    pub fn f64_vec(&mut self, count: usize, context: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(count * 8, context)?;
        let mut out = Vec::with_capacity(count);
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(CorruptKind::InvalidField(format!("non-finite value in {context}")).into());
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Length-prefixed UTF-8 string (u32 length).
    pub fn string(&mut self, context: &'static str) -> Result<String> {
        let len = self.u32(context)? as usize;
        let raw = self.take(len, context)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CorruptKind::InvalidField(format!("invalid utf-8 in {context}")).into())
    }

    /// Error unless the whole buffer has been consumed.
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CorruptKind::TrailingData.into());
        }
        Ok(())
    }
}

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_i64(buf: &mut Vec<u8>, v: i64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64_slice(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        put_f64(buf, *v);
    }
}

pub(crate) fn put_string(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

/// Split one seed into an independent stream seed (splitmix64 step).
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
