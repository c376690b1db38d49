//! Binary tensor files: the 8-byte magic `NDTENS01`, a rank byte, `rank`
//! little-endian `u64` dimensions, then row-major little-endian `f32` data.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NDTENS01";

pub fn encode(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let numel: usize = shape.iter().product();
    if numel != data.len() || shape.len() > u8::MAX as usize {
        return Err(Error::Data(format!(
            "cannot encode {} values as shape {shape:?}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(9 + 8 * shape.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses an encoded tensor; `what` names the source in error messages.
pub fn decode(bytes: &[u8], what: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |detail: String| Error::TensorFile {
        path: what.to_path_buf(),
        detail,
    };
    if bytes.len() < 9 || &bytes[..8] != MAGIC {
        return Err(bad("missing NDTENS01 header".into()));
    }
    let rank = bytes[8] as usize;
    let header = 9 + 8 * rank;
    if bytes.len() < header {
        return Err(bad("truncated shape".into()));
    }
    let shape: Vec<usize> = bytes[9..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
        .collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(format!("shape {shape:?} overflows")))?;
    let body = &bytes[header..];
    if body.len() != numel * 4 {
        return Err(bad(format!(
            "shape {shape:?} needs {} bytes of data, found {}",
            numel * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok((shape, data))
}

pub fn write_tensor(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode(shape, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_array2(path: &Path, a: &Array2<f32>) -> Result<()> {
    let data: Vec<f32> = a.iter().copied().collect();
    write_tensor(path, a.shape(), &data)
}

/// Reads a rank-2 tensor, checking the row count when `rows` is given.
pub fn read_array2(path: &Path, rows: Option<usize>) -> Result<Array2<f32>> {
    let (shape, data) = read_tensor(path)?;
    if shape.len() != 2 || rows.is_some_and(|r| r != shape[0]) {
        return Err(Error::TensorFile {
            path: path.to_path_buf(),
            detail: format!("shape {shape:?}, expected {:?} rows", rows),
        });
    }
    Ok(Array2::from_shape_vec((shape[0], shape[1]), data).expect("shape checked"))
}

pub fn write_array3(path: &Path, a: &Array3<f32>) -> Result<()> {
    let data: Vec<f32> = a.iter().copied().collect();
    write_tensor(path, a.shape(), &data)
}

pub fn read_array3(path: &Path) -> Result<Array3<f32>> {
    let (shape, data) = read_tensor(path)?;
    if shape.len() != 3 {
        return Err(Error::TensorFile {
            path: path.to_path_buf(),
            detail: format!("rank {} where 3 was expected", shape.len()),
        });
    }
    Ok(Array3::from_shape_vec((shape[0], shape[1], shape[2]), data).expect("shape checked"))
}
