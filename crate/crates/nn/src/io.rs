//! Binary tensor container and named checkpoints.
//!
//! A tensor is stored as a 16-byte header followed by its entries:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 0..4  | magic `RGT1`                              |
//! | 4     | dtype, `1` = little-endian `f64`          |
//! | 5     | rank, 1 to 5                              |
//! | 6..16 | five `u16` dimensions, unused ones zero   |
//!
//! Entries follow in row-major order. NaN or infinite values are rejected
//! when reading and when writing.
//!
//! A checkpoint is the magic `RGCK`, a `u32` entry count and then, per
//! entry, a `u16` name length, the UTF-8 name and one tensor container.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use crate::NnError;

pub const TENSOR_MAGIC: &[u8; 4] = b"RGT1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RGCK";
pub const DTYPE_F64: u8 = 1;
pub const MAX_RANK: usize = 5;
pub const HEADER_LEN: usize = 16;

fn format_err(msg: impl Into<String>) -> NnError {
    NnError::Format(msg.into())
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), NnError> {
    if t.rank() == 0 || t.rank() > MAX_RANK {
        return Err(format_err(format!("rank {} is outside 1..={MAX_RANK}", t.rank())));
    }
    if let Some(&d) = t.shape().iter().find(|&&d| d > u16::MAX as usize) {
        return Err(format_err(format!("dimension {d} does not fit in 16 bits")));
    }
    if !t.is_finite() {
        return Err(NnError::NonFinite("tensor to write".into()));
    }
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(TENSOR_MAGIC);
    header[4] = DTYPE_F64;
    header[5] = t.rank() as u8;
    for (k, &d) in t.shape().iter().enumerate() {
        header[6 + 2 * k..8 + 2 * k].copy_from_slice(&(d as u16).to_le_bytes());
    }
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, NnError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[..4] != TENSOR_MAGIC {
        return Err(format_err("bad tensor magic"));
    }
    if header[4] != DTYPE_F64 {
        return Err(format_err(format!("unsupported dtype {}", header[4])));
    }
    let rank = header[5] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(format_err(format!("rank {rank} is outside 1..={MAX_RANK}")));
    }
    let dims: Vec<usize> = (0..MAX_RANK)
        .map(|k| u16::from_le_bytes([header[6 + 2 * k], header[7 + 2 * k]]) as usize)
        .collect();
    if dims[rank..].iter().any(|&d| d != 0) {
        return Err(format_err("nonzero dimension beyond the declared rank"));
    }
    let shape = dims[..rank].to_vec();
    let len: usize = shape.iter().product();
    let mut body = vec![0u8; len * 8];
    r.read_exact(&mut body)?;
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("tensor file".into()));
    }
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let t = read_tensor(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after tensor"));
    }
    Ok(t)
}

pub fn write_checkpoint<W: Write>(w: &mut W, entries: &[(String, Tensor)]) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| format_err("tensor name too long"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<BTreeMap<String, Tensor>, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err("bad checkpoint magic"));
    }
    let mut count = [0u8; 4];
    r.read_exact(&mut count)?;
    let mut out = BTreeMap::new();
    for _ in 0..u32::from_le_bytes(count) {
        let mut len = [0u8; 2];
        r.read_exact(&mut len)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| format_err("tensor name is not UTF-8"))?;
        let t = read_tensor(r)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(format_err(format!("duplicate tensor {name:?}")));
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, Tensor>, NnError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
