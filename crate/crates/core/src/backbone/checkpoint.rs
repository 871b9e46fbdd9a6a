//! Checkpoint files.
//!
//! Layout: `RCKP`, version `u32`, config block (layers, d_model, heads, ffn,
//! context, vocab as `u32`; dropout `f64`; seed `u64`; precision `u8`), tensor
//! count `u32`, then per tensor the name (`u32` length + UTF-8), rank `u32`,
//! dims `u32` each and little-endian `f32` values.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{Model, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::io::Reader;
use crate::numerics::{Precision, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RCKP";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let c = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.layers, c.d_model, c.heads, c.ffn, c.context, c.vocab] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout.to_le_bytes());
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.push(match c.precision {
        Precision::F32 => 0,
        Precision::F64 => 1,
    });
    let entries = model.params().entries();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected RCKP"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let dropout = f64::from_le_bytes(r.bytes(8)?.try_into().expect("8 bytes"));
    let seed = r.u64()?;
    let at = r.offset();
    let precision = match r.bytes(1)?[0] {
        0 => Precision::F32,
        1 => Precision::F64,
        other => return Err(Error::format(at, format!("unknown precision tag {other}"))),
    };
    let config = ModelConfig {
        layers: dims[0],
        d_model: dims[1],
        heads: dims[2],
        ffn: dims[3],
        context: dims[4],
        vocab: dims[5],
        dropout,
        seed,
        precision,
    };
    config.validate()?;
    let shapes = Params::shapes(&config);
    let expected = shapes.entries();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::format(
            r.offset(),
            format!("{count} tensors, config implies {}", expected.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (want_name, want_shape) in expected {
        let at = r.offset();
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?;
        if name != want_name {
            return Err(Error::format(
                at,
                format!("expected tensor {want_name}, found {name}"),
            ));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if &shape != want_shape {
            return Err(Error::format(
                at,
                format!("tensor {name} has shape {shape:?}, expected {want_shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f32()? as f64);
        }
        values.push(Arc::new(Tensor::new(shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            "trailing bytes after last tensor",
        ));
    }
    let params = shapes.from_values(values)?;
    Model::from_params(config, params)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&fs::read(path)?)
}
