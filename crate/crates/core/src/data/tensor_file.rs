use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Binary tensor file ("MTEN"), bit-exact and little-endian:
/// magic "MTEN", u16 version = 1, u8 dtype = 1 (f32), u8 ndim,
/// ndim x u64 dims, then the row-major f32 payload.
pub const MAGIC: &[u8; 4] = b"MTEN";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + t.rank() * 8 + t.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let need = |needed: usize, available: usize| -> Error {
        Error::Truncated {
            context: "tensor file",
            needed,
            available,
        }
    };
    if bytes.len() < 8 {
        return Err(need(8, bytes.len()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            context: "tensor file",
            expected: "MTEN",
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            context: "tensor file",
            found: version,
            expected: VERSION,
        });
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F32 {
        return Err(Error::BadDtype { found: dtype });
    }
    let ndim = bytes[7] as usize;
    let header_len = 8 + ndim * 8;
    if bytes.len() < header_len {
        return Err(need(header_len, bytes.len()));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut elems: u128 = 1;
    for i in 0..ndim {
        let off = 8 + i * 8;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        elems = elems.saturating_mul(d as u128);
        shape.push(d as usize);
    }
    let payload = elems
        .checked_mul(4)
        .filter(|&b| b <= usize::MAX as u128)
        .ok_or(Error::Truncated {
            context: "tensor file",
            needed: usize::MAX,
            available: bytes.len(),
        })? as usize;
    if bytes.len() < header_len + payload {
        return Err(need(header_len + payload, bytes.len()));
    }
    let mut data = Vec::with_capacity(elems as usize);
    for chunk in bytes[header_len..header_len + payload].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Tensor::new(shape, data)
}

/// Writes a tensor atomically (temp file then rename).
pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor_to_bytes(t);
    let tmp = path.with_extension("mten.tmp");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path.as_ref())?;
    tensor_from_bytes(&bytes)
}
