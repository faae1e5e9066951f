//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `ICAM`, format version `u32`, parameter
//! count `u32`; then per parameter: name length `u32`, UTF-8 name, rank
//! `u64`, each dim `u64`, dtype tag `u8` (0 = f32, 1 = f64), raw values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::tensor::{ParameterStore, Tensor};

pub const MAGIC: &[u8; 4] = b"ICAM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

pub fn to_bytes(store: &ParameterStore, dtype: DType) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(dtype.tag());
        match dtype {
            DType::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint; also returns the dtype of the first parameter.
pub fn from_bytes(buf: &[u8]) -> Result<(ParameterStore, DType)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    let mut first_dtype = DType::F64;
    for i in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("parameter {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u64()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
        let dtype = match r.take(1)?[0] {
            0 => DType::F32,
            1 => DType::F64,
            t => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {t}"))),
        };
        if i == 0 {
            first_dtype = dtype;
        }
        let data: Vec<f64> = match dtype {
            DType::F32 => r
                .take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => r
                .take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        store
            .insert(name, t)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok((store, first_dtype))
}

pub fn save(store: &ParameterStore, path: &Path, dtype: DType) -> Result<()> {
    fs::write(path, to_bytes(store, dtype)).map_err(|e| Error::file(path, e))
}

pub fn load(path: &Path) -> Result<ParameterStore> {
    let buf = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(from_bytes(&buf)?.0)
}
