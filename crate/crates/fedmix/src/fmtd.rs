//! Single-tensor files: magic `FMTD`, a `u8` rank, `u32` little-endian
//! dimensions, then the values as little-endian `f32`, row-major.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMTD";

pub fn encode(shape: &[usize], values: &[f32]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), values.len());
    let mut out = Vec::with_capacity(5 + 4 * shape.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a tensor file; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |msg: &str| Error::format(path, format!("malformed FMTD tensor: {msg}"));
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let rank = bytes[4] as usize;
    let header = 5 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if bytes.len() != header + 4 * n {
        return Err(bad(&format!(
            "shape {shape:?} needs {} payload bytes, found {}",
            4 * n,
            bytes.len() - header
        )));
    }
    let values = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((shape, values))
}

pub fn write(path: &Path, shape: &[usize], values: &[f32]) -> Result<()> {
    std::fs::write(path, encode(shape, values)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
