//! ALNW map files.
//!
//! ```text
//! magic      4 bytes  "ALNW"
//! version    u32      1
//! kind       u8       0 = identity, 1 = procrustes, 2 = ols
//! scheme     u8       0 = none, 1 = normalize-center-renormalize
//! d          u32
//! image_mean d x f64
//! text_mean  d x f64
//! W          d x d f64, row-major
//! crc        u32      CRC-32 (IEEE) of every byte from `kind` through `W`
//! ```
//!
//! All integers and floats little-endian.

use std::path::Path;

use super::{AlignmentMap, MapKind, Preprocessor, Scheme};
use crate::embx::Reader;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ALNW";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8;

pub fn encode(map: &AlignmentMap) -> Vec<u8> {
    let d = map.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 6 + (2 * d + d * d) * 8 + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(map.kind().code());
    out.push(map.preprocessor().scheme().code());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    let floats = map
        .preprocessor()
        .image_mean()
        .iter()
        .chain(map.preprocessor().text_mean())
        .chain(map.matrix());
    for v in floats {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<AlignmentMap> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected ALNW".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            what: "ALNW",
            found: version,
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Format("truncated ALNW file".into()));
    }
    let body = &bytes[HEADER_LEN..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            what: "ALNW payload".into(),
            stored,
            computed,
        });
    }
    let kind = MapKind::from_code(r.u8()?)?;
    let scheme = Scheme::from_code(r.u8()?)?;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(Error::Format("ALNW dimension is zero".into()));
    }
    let floats = d
        .checked_mul(d)
        .and_then(|dd| dd.checked_add(2 * d))
        .ok_or_else(|| Error::Format("ALNW dimension overflows".into()))?;
    if r.remaining() != floats * 8 + 4 {
        return Err(Error::Format(format!(
            "ALNW body length does not match d = {d}"
        )));
    }
    let mut read_vec = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>>>();
    let image_mean = read_vec(d)?;
    let text_mean = read_vec(d)?;
    let w = read_vec(d * d)?;
    let pre = Preprocessor::from_parts(image_mean, text_mean, scheme)?;
    AlignmentMap::from_parts(kind, w, pre)
}

pub fn write(path: impl AsRef<Path>, map: &AlignmentMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(map)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<AlignmentMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
