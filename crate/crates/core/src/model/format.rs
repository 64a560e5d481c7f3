//! Binary model container.
//!
//! ```text
//! magic      4 bytes  "SDPD"
//! version    u16
//! config     n_csdb, in, stem, growth, trunk, side, fuse[0..3]  (u32 each)
//!            no_skipping u8, single_fuse u8, leaky_slope f64
//! count      u32      number of parameter records
//! record     name_len u32, name (UTF-8), rank u32, extents (u32 × rank),
//!            values (f32 × product(extents))
//! ```
//!
//! All integers and floats are little-endian. Trailing bytes are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Element;

use super::{ModelConfig, SdpedModel};

pub const MAGIC: &[u8; 4] = b"SDPD";
pub const FORMAT_VERSION: u16 = 1;

pub fn serialize<T: Element>(model: &SdpedModel<T>) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(64 + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        c.n_csdb,
        c.in_channels,
        c.stem_channels,
        c.growth,
        c.trunk_channels,
        c.side_channels,
        c.fuse_channels[0],
        c.fuse_channels[1],
        c.fuse_channels[2],
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(c.ablation_no_skipping as u8);
    out.push(c.ablation_single_fuse as u8);
    out.extend_from_slice(&c.leaky_slope.to_le_bytes());

    let params = model.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<SdpedModel<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not an SDPED model file".into()));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let no_skipping = r.flag()?;
    let single_fuse = r.flag()?;
    let slope = f64::from_le_bytes(r.array()?);
    let config = ModelConfig {
        n_csdb: dims[0],
        in_channels: dims[1],
        stem_channels: dims[2],
        growth: dims[3],
        trunk_channels: dims[4],
        side_channels: dims[5],
        fuse_channels: [dims[6], dims[7], dims[8]],
        leaky_slope: slope,
        ablation_no_skipping: no_skipping,
        ablation_single_fuse: single_fuse,
    };
    config.validate().map_err(|e| Error::Format(format!("invalid config block: {e}")))?;

    let mut model = SdpedModel::<f32>::zeroed(config)?;
    let count = r.u32()? as usize;
    let expected_names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Format(format!(
            "file holds {count} parameter records, config implies {}",
            params.len()
        )));
    }
    for (i, tensor) in params.iter_mut().enumerate() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format(format!("record {i}: name is not UTF-8")))?;
        if name != expected_names[i] {
            return Err(Error::Format(format!(
                "record {i}: expected parameter {}, found {name}",
                expected_names[i]
            )));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != tensor.shape() {
            return Err(Error::Format(format!(
                "parameter {name}: header shape {shape:?} does not match config shape {:?}",
                tensor.shape()
            )));
        }
        let raw = r.take(4 * tensor.numel())?;
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last record", bytes.len() - r.pos)));
    }
    drop(params);
    Ok(model)
}

pub fn save_model<T: Element>(model: &SdpedModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, serialize(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SdpedModel<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated stream: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("invalid flag byte {v}"))),
        }
    }
}
