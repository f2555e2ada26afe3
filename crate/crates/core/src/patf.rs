//! PATF: the little-endian binary container for 2-D real arrays.
//!
//! Layout:
//!
//! ```text
//! "PATF"            4 bytes magic
//! version = 1       u32 LE
//! ndim = 2          u32 LE
//! dims[ndim]        u64 LE each, slowest axis first (rows, then columns)
//! values            binary64 LE, row-major
//! ```
//!
//! Grid spacing is not stored; it travels in the dataset manifest.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField2D};

pub const MAGIC: &[u8; 4] = b"PATF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 2 * 8;

/// A decoded 2-D array before it is given a physical meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Array2 {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

pub fn encode_array(rows: usize, cols: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "{} values for dims ({rows}, {cols})",
            values.len()
        )));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

pub fn decode_array(bytes: &[u8]) -> Result<Array2> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { expected: "PATF" });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let ndim = read_u32(bytes, 8);
    if ndim != 2 {
        return Err(Error::UnsupportedNdim(ndim));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let rows = usize::try_from(read_u64(bytes, 12))
        .map_err(|_| Error::Malformed("row count overflows usize".into()))?;
    let cols = usize::try_from(read_u64(bytes, 20))
        .map_err(|_| Error::Malformed("column count overflows usize".into()))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Malformed("dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(Array2 { rows, cols, values })
}

/// Serialize a field with dims `(ny, nx)`.
pub fn encode_field(field: &ScalarField2D) -> Result<Vec<u8>> {
    let g = field.grid();
    encode_array(g.ny(), g.nx(), field.values())
}

/// Inverse of [`encode_field`]; `dx` comes from the surrounding manifest.
pub fn decode_field(bytes: &[u8], dx: f64) -> Result<ScalarField2D> {
    let a = decode_array(bytes)?;
    let grid = GridSpec::new(a.cols, a.rows, dx)?;
    ScalarField2D::new(grid, a.values)
}

pub fn write_field(path: &Path, field: &ScalarField2D) -> Result<()> {
    let bytes = encode_field(field)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path, dx: f64) -> Result<ScalarField2D> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes, dx)
}

pub fn write_array(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    let bytes = encode_array(rows, cols, values)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Array2> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes)
}
