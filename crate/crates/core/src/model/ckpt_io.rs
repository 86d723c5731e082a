use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::arch::{Layer, MlpArch, ModeCheckpoint, TrainMeta};
use crate::numkit::Tensor;

/// Checkpoint file ("MCKP"): magic, u16 version = 1, u32 JSON header length,
/// the JSON header (arch, seed, train_meta, layer order), then per-layer W
/// and b payloads as raw little-endian f32 in row-major order.
pub const MAGIC: &[u8; 4] = b"MCKP";
pub const VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CkptHeader {
    arch: MlpArch,
    seed: u64,
    train_meta: TrainMeta,
    layers: Vec<LayerShape>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerShape {
    rows: usize,
    cols: usize,
}

pub fn ckpt_to_bytes(ckpt: &ModeCheckpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let header = CkptHeader {
        arch: ckpt.arch.clone(),
        seed: ckpt.seed,
        train_meta: ckpt.train_meta.clone(),
        layers: ckpt
            .layers
            .iter()
            .map(|l| LayerShape {
                rows: l.w.rows(),
                cols: l.w.cols(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for layer in &ckpt.layers {
        for &v in layer.w.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in layer.b.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn ckpt_from_bytes(bytes: &[u8]) -> Result<ModeCheckpoint> {
    let need = |needed: usize, available: usize| Error::Truncated {
        context: "checkpoint file",
        needed,
        available,
    };
    if bytes.len() < 10 {
        return Err(need(10, bytes.len()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            context: "checkpoint file",
            expected: "MCKP",
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            context: "checkpoint file",
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + header_len {
        return Err(need(10 + header_len, bytes.len()));
    }
    let header: CkptHeader = serde_json::from_slice(&bytes[10..10 + header_len])?;
    header.arch.validate()?;
    if header.layers.len() != header.arch.layer_count() {
        return Err(Error::ShapeMismatch {
            context: "checkpoint header",
            expected: format!("{} layers", header.arch.layer_count()),
            got: format!("{}", header.layers.len()),
        });
    }

    let mut off = 10 + header_len;
    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, shape) in header.layers.iter().enumerate() {
        let (inp, out) = (header.arch.layer_widths[i], header.arch.layer_widths[i + 1]);
        if shape.rows != out || shape.cols != inp {
            return Err(Error::ShapeMismatch {
                context: "checkpoint layer shapes",
                expected: format!("[{out}, {inp}]"),
                got: format!("[{}, {}]", shape.rows, shape.cols),
            });
        }
        let wlen = shape.rows * shape.cols * 4;
        let blen = shape.rows * 4;
        if bytes.len() < off + wlen + blen {
            return Err(need(off + wlen + blen, bytes.len()));
        }
        let w: Vec<f32> = bytes[off..off + wlen]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += wlen;
        let b: Vec<f32> = bytes[off..off + blen]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += blen;
        layers.push(Layer {
            w: Tensor::new(vec![shape.rows, shape.cols], w)?,
            b: Tensor::new(vec![shape.rows], b)?,
        });
    }

    let ckpt = ModeCheckpoint {
        arch: header.arch,
        layers,
        seed: header.seed,
        train_meta: header.train_meta,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn save_ckpt(path: impl AsRef<Path>, ckpt: &ModeCheckpoint) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let bytes = ckpt_to_bytes(ckpt)?;
    let tmp = path.with_extension("mckp.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_ckpt(path: impl AsRef<Path>) -> Result<ModeCheckpoint> {
    let bytes = fs::read(path.as_ref())?;
    ckpt_from_bytes(&bytes)
}
