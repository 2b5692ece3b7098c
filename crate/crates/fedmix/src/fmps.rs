//! Parameter-set blobs.
//!
//! Layout, all integers little-endian: magic `FMPS`, a `u8` value width
//! (4 for `f32`, 8 for `f64`), a `u32` entry count, then per entry a `u32`
//! name length, the UTF-8 name, a `u8` kind (0 trainable, 1 buffer), a `u8`
//! rank, `u32` dimensions, and the values at the declared width.

use std::path::Path;

use fedmix_core::model::{ParamKind, ParamSet};
use fedmix_core::{Precision, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMPS";

pub fn encode(params: &ParamSet, precision: Precision) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(precision.bytes_per_value() as u8);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for e in params.iter() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(match e.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        out.push(e.tensor.rank() as u8);
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            match precision {
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

/// A decoded blob: the parameters, their stored precision, and how many of
/// the blob's bytes are parameter values (everything except headers).
pub struct Decoded {
    pub params: ParamSet,
    pub precision: Precision,
    pub value_bytes: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated FMPS blob"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not an FMPS blob"));
    }
    let precision = match r.u8()? {
        4 => Precision::F32,
        8 => Precision::F64,
        w => return Err(Error::format(path, format!("unsupported value width {w}"))),
    };
    let width = precision.bytes_per_value();
    let count = r.u32()?;
    let mut params = ParamSet::new();
    let mut value_bytes = 0;
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let kind = match r.u8()? {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(Error::format(path, format!("unknown parameter kind {k} for {name:?}"))),
        };
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * width)?;
        value_bytes += raw.len();
        let values = match precision {
            Precision::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect(),
            Precision::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        params.push(name, kind, Tensor::new(shape, values)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after FMPS entries"));
    }
    Ok(Decoded {
        params,
        precision,
        value_bytes,
    })
}

pub fn write(path: &Path, params: &ParamSet, precision: Precision) -> Result<()> {
    std::fs::write(path, encode(params, precision)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Decoded> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
