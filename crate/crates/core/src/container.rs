//! Binary tensor container shared by checkpoints and feature dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BDN1"
//! u32 metadata length, UTF-8 JSON metadata
//! repeated tensor blocks:
//!     u32 name length, UTF-8 name, u32 rank, rank x u32 dims,
//!     prod(dims) x f32 values (row-major)
//! u32 CRC32 of every preceding byte
//! ```

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"BDN1";

#[derive(Debug, Error, PartialEq)]
pub enum ContainerError {
    #[error("file truncated ({0})")]
    Truncated(&'static str),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("bad magic bytes (not a BDN1 container)")]
    BadMagic,
    #[error("metadata is not valid UTF-8")]
    BadUtf8,
    #[error("trailing bytes after the last tensor block")]
    TrailingBytes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

pub fn encode(metadata: &str, tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(ContainerError::Truncated(what));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Verifies the checksum first, so any flipped byte is reported as a
/// checksum failure rather than a parse error.
pub fn decode(bytes: &[u8]) -> Result<(String, Vec<NamedTensor>), ContainerError> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(ContainerError::Truncated("header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ContainerError::Checksum { stored, computed });
    }
    if &body[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let meta_len = r.u32("metadata length")? as usize;
    let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| ContainerError::BadUtf8)?
        .to_string();
    let mut tensors = Vec::new();
    while r.pos < body.len() {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| ContainerError::BadUtf8)?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("tensor dims"))
            .collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or(ContainerError::Truncated("tensor values"))?;
        let raw = r.take(
            count.checked_mul(4).ok_or(ContainerError::Truncated("tensor values"))?,
            "tensor values",
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor { name, dims, values });
    }
    if r.pos != body.len() {
        return Err(ContainerError::TrailingBytes);
    }
    Ok((meta, tensors))
}
