//! Feature matrix files.
//!
//! ```text
//! magic   8 bytes  "SQZFFEAT"
//! frames  u32 little-endian
//! dims    u32 little-endian
//! data    frames × dims f64 little-endian, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURES_MAGIC: &[u8; 8] = b"SQZFFEAT";

pub fn write_features(t: &Tensor, w: &mut impl Write) -> Result<()> {
    let (frames, dims) = t.dims2("write_features")?;
    let as_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")));
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&as_u32(frames)?.to_le_bytes())?;
    w.write_all(&as_u32(dims)?.to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features(r: &mut impl Read) -> Result<Tensor> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::Format(format!("truncated feature header: {e}")))?;
    if &header[..8] != FEATURES_MAGIC {
        return Err(Error::Format("not a feature file (bad magic)".into()));
    }
    let frames = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let dims = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
    let n = frames
        .checked_mul(dims)
        .ok_or_else(|| Error::Format(format!("feature size {frames} × {dims} overflows")))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(Error::Format(format!("expected {} data bytes for {frames} × {dims}, found {}", n * 8, bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(&[frames, dims], data)
}

pub fn save_features(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Tensor> {
    read_features(&mut BufReader::new(File::open(path)?))
}
