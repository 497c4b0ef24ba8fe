//! Binary container of named `f64` tensors.
//!
//! Layout, little-endian: magic `SPDT`, version `u32 = 1`, entry count `u32`;
//! per entry a `u16` name length and UTF-8 name, dtype `u8` (0 = f64), rank
//! `u8`, one `u64` per dimension, the row-major payload and the CRC32 of the
//! payload bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"SPDT";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

pub fn encode_container(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::InvalidSpec("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::InvalidSpec(format!("name too long: {} bytes", name.len())))?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| Error::InvalidSpec(format!("rank {} too large", t.shape.len())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(rank);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let start = out.len();
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::InvalidSpec("entry name is not UTF-8".into()))?;
        let [dtype, rank] = r.array()?;
        if dtype != DTYPE_F64 {
            return Err(Error::InvalidSpec(format!("{name}: unsupported dtype {dtype}")));
        }
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(r.array()?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or(Error::TruncatedFile)?;
        let payload = r.take(len)?;
        let crc = u32::from_le_bytes(r.array()?);
        if crc32fast::hash(payload) != crc {
            return Err(Error::ChecksumMismatch(name));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        entries.push((name, Tensor::new(shape, data)));
    }
    Ok(entries)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_matrix_container(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode_container(entries)?;
    let tmp = path.with_extension("spdt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_matrix_container(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_container(&fs::read(path)?)
}
