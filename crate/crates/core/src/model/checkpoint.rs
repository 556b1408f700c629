//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SQZFCKPT"
//! version    u32
//! config     u32 length + UTF-8 JSON of the ModelConfig
//! count      u32 number of arrays
//! per array:
//!   kind     u8   0 = parameter, 1 = buffer
//!   name     u32 length + UTF-8 bytes
//!   ndim     u32, then ndim × u64 dimensions
//!   data     product(dims) × f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EncoderModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SQZFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_array(w: &mut impl Write, kind: u8, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&[kind])?;
    put_str(w, name)?;
    put_u32(w, shape.len())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(get(r)?) as usize)
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    String::from_utf8(b).map_err(|e| Error::Format(format!("invalid UTF-8 name: {e}")))
}

pub fn write_checkpoint(model: &EncoderModel, w: &mut impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_str(w, &serde_json::to_string(&model.config)?)?;
    put_u32(w, model.store.len() + model.store.buffers().len())?;
    for (name, t) in model.store.iter() {
        put_array(w, 0, name, t.shape(), t.data())?;
    }
    for (name, b) in model.store.buffers() {
        put_array(w, 1, name, &[b.len()], b)?;
    }
    Ok(())
}

/// Rebuild the model from its config echo, then overwrite every array by name.
pub fn read_checkpoint(r: &mut impl Read) -> Result<EncoderModel> {
    if &get::<8>(r)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(get(r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig = serde_json::from_str(&get_str(r)?)?;
    let mut model = EncoderModel::build(&config, 0)?;
    let count = get_u32(r)?;
    let mut seen = 0;
    for _ in 0..count {
        let [kind] = get::<1>(r)?;
        let name = get_str(r)?;
        let ndim = get_u32(r)?;
        let shape: Vec<usize> = (0..ndim).map(|_| Ok(u64::from_le_bytes(get(r)?) as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| Ok(f64::from_le_bytes(get(r)?))).collect::<Result<_>>()?;
        match kind {
            0 => {
                let id = model
                    .store
                    .id(&name)
                    .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
                if model.store.get(id).shape() != shape.as_slice() {
                    return Err(Error::Format(format!("parameter {name} has shape {shape:?}, expected {:?}", model.store.get(id).shape())));
                }
                *model.store.get_mut(id) = Tensor::new(&shape, data)?;
                seen += 1;
            }
            1 => model.store.set_buffer(&name, data).map_err(|e| Error::Format(e.to_string()))?,
            k => return Err(Error::Format(format!("unknown array kind {k}"))),
        }
    }
    if seen != model.store.len() {
        return Err(Error::Format(format!("checkpoint holds {seen} of {} parameters", model.store.len())));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &EncoderModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderModel> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
