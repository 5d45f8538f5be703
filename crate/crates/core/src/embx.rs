//! EMBX interchange files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "EMBX"
//! version  u32      1
//! dtype    u8       0 = f32
//! modality u8       0 = image, 1 = text
//! d        u32
//! count    u64
//! ids      count x (u16 byte length, UTF-8 bytes)
//! payload  count x d f32, row-major
//! crc      u32      CRC-32 (IEEE) of the payload bytes
//! ```
//!
//! Values are promoted to f64 on load and rounded to f32 on save.

use std::path::Path;

use crate::embedding::{EmbeddingMatrix, Modality};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMBX";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn encode(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let id_bytes: usize = m.ids().iter().map(|id| 2 + id.len()).sum();
    let mut out = Vec::with_capacity(22 + id_bytes + m.data().len() * 4 + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(m.modality().code());
    let dim = u32::try_from(m.dim())
        .map_err(|_| Error::InvalidArgument(format!("dimension {} too large", m.dim())))?;
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
    for id in m.ids() {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidArgument(format!("id longer than 65535 bytes: {id:.32}...")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    let payload_start = out.len();
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected EMBX".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            what: "EMBX",
            found: version,
        });
    }
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported EMBX dtype code {dtype}")));
    }
    let modality = Modality::from_code(r.u8()?)?;
    let dim = r.u32()? as usize;
    let count = usize::try_from(r.u64()?)
        .map_err(|_| Error::Format("EMBX row count overflows usize".into()))?;
    // Every id costs at least two bytes, which bounds `count` before allocating.
    if count > bytes.len() / 2 {
        return Err(Error::Format(format!(
            "declared count {count} exceeds file size {}",
            bytes.len()
        )));
    }
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.u16()? as usize;
        let raw = r.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::Format(format!("id {i} is not valid UTF-8")))?;
        ids.push(id.to_owned());
    }
    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("EMBX payload size overflows".into()))?;
    let expected_rest = payload_len + 4;
    if r.remaining() != expected_rest {
        return Err(Error::Format(format!(
            "declared {count} x {dim} payload needs {expected_rest} trailing bytes, found {}",
            r.remaining()
        )));
    }
    let payload = r.take(payload_len)?;
    let stored = r.u32()?;
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum {
            what: "EMBX payload".into(),
            stored,
            computed,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    EmbeddingMatrix::new(ids, data, dim, modality)
}

pub fn write(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(m)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
