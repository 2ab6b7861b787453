//! Versioned binary checkpoint container.
//!
//! All integers are little-endian `u32` unless noted.
//!
//! ```text
//! magic      8 bytes  "LGFACKPT"
//! version    u32      currently 1
//! precision  u8       0 = f32 payload, 1 = f64 payload
//! config     u32 length + UTF-8 JSON of the architecture config
//! n_params   u32
//! table      n_params × { u32 name length, name bytes, u32 ndim, ndim × u32 dims }
//! payload    every parameter's values in table order, little-endian floats
//! ```
//!
//! Loading rebuilds the architecture from the embedded config and requires
//! the parameter table to match it exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LgfaConfig, LgfaModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LGFACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Storage precision of parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Precision::F32),
            1 => Ok(Precision::F64),
            other => Err(Error::Checkpoint(format!("unknown precision tag {other}"))),
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &LgfaModel, precision: Precision) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION as usize)?;
    buf.push(precision.tag());
    let config = serde_json::to_vec(model.config())?;
    put_u32(&mut buf, config.len())?;
    buf.extend_from_slice(&config);
    put_u32(&mut buf, model.params().len())?;
    for (name, tensor) in model.params().iter() {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, tensor.shape().len())?;
        for &d in tensor.shape() {
            put_u32(&mut buf, d)?;
        }
    }
    for (_, tensor) in model.params().iter() {
        for &v in tensor.data() {
            match precision {
                Precision::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(LgfaModel, Precision)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let precision = Precision::from_tag(r.take(1, "precision")?[0])?;
    let config_len = r.u32("config length")?;
    let config: LgfaConfig = serde_json::from_slice(r.take(config_len, "config")?)?;
    let mut model = LgfaModel::new(config, 0)?;

    let n_params = r.u32("parameter count")?;
    if n_params != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n_params} parameters, architecture has {}",
            model.params().len()
        )));
    }
    let mut table = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32("ndim")?;
        let shape = (0..ndim).map(|_| r.u32("dim")).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let width = match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    for ((name, shape), (expected_name, tensor)) in table.iter().zip(model.params_mut().iter_mut()) {
        if name != expected_name || shape.as_slice() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} {shape:?} does not match architecture {expected_name} {:?}",
                tensor.shape()
            )));
        }
        let raw = r.take(tensor.numel() * width, name)?;
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(width)) {
            *dst = match precision {
                Precision::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
                Precision::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
            };
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    Ok((model, precision))
}

pub fn save_checkpoint(model: &LgfaModel, precision: Precision, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, precision)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(LgfaModel, Precision)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
