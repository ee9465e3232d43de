//! PJRM grid container: a 16-byte header followed by a row-major
//! little-endian payload.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PJRM" (0x50 0x4A 0x52 0x4D)
//! 4       1     version, 0x01
//! 5       1     dtype: 0x00 = f32, 0x01 = f64
//! 6       2     reserved, zero
//! 8       4     rows (depth samples), little-endian u32
//! 12      4     cols (traces), little-endian u32
//! 16      ...   rows*cols values, row-major, little-endian
//! ```
//!
//! Checkpoint files concatenate named records: a little-endian u16 name
//! length, the UTF-8 name, then one grid container per parameter block.

use std::fs;
use std::io::Write;
use std::path::Path;

use pjrm_core::{Grid2D, Real};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PJRM";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x00;
pub const DTYPE_F64: u8 = 0x01;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic (not a PJRM container)")]
    BadMagic,
    #[error("unsupported container version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown dtype byte {0:#04x}")]
    BadDtype(u8),
    #[error("reserved header bytes must be zero")]
    ReservedNonZero,
    #[error("truncated payload: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("grid dimensions overflow the container limits")]
    DimOverflow,
    #[error("{extra} trailing bytes after the payload")]
    TrailingBytes { extra: usize },
    #[error("dtype mismatch: file holds {found}, expected {expected}")]
    DtypeMismatch {
        found: &'static str,
        expected: &'static str,
    },
    #[error("bad record name")]
    BadName,
}

pub trait Element: Real {
    const DTYPE: u8;
    const SIZE: usize;
    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;
    fn dtype_name() -> &'static str;
}

impl Element for f32 {
    const DTYPE: u8 = DTYPE_F32;
    const SIZE: usize = 4;

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }

    fn dtype_name() -> &'static str {
        "f32"
    }
}

impl Element for f64 {
    const DTYPE: u8 = DTYPE_F64;
    const SIZE: usize = 8;

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }

    fn dtype_name() -> &'static str {
        "f64"
    }
}

pub fn encode_grid<T: Element>(grid: &Grid2D<T>) -> Result<Vec<u8>, FormatError> {
    let (nz, nx) = grid.dims();
    if nz > u32::MAX as usize || nx > u32::MAX as usize {
        return Err(FormatError::DimOverflow);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + grid.len() * T::SIZE);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(nz as u32).to_le_bytes());
    out.extend_from_slice(&(nx as u32).to_le_bytes());
    for &v in grid.as_slice() {
        v.put_le(&mut out);
    }
    Ok(out)
}

/// Decodes one container from the front of `bytes`; returns the grid and the
/// number of bytes consumed. Trailing bytes are the caller's concern.
fn decode_prefix<T: Element>(bytes: &[u8]) -> Result<(Grid2D<T>, usize), FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(FormatError::BadVersion(bytes[4]));
    }
    let dtype = bytes[5];
    if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
        return Err(FormatError::BadDtype(dtype));
    }
    if dtype != T::DTYPE {
        return Err(FormatError::DtypeMismatch {
            found: if dtype == DTYPE_F32 { "f32" } else { "f64" },
            expected: T::dtype_name(),
        });
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(FormatError::ReservedNonZero);
    }
    let rows = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let cols = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    let count = rows.checked_mul(cols).ok_or(FormatError::DimOverflow)?;
    let payload = count.checked_mul(T::SIZE).ok_or(FormatError::DimOverflow)?;
    let total = HEADER_LEN.checked_add(payload).ok_or(FormatError::DimOverflow)?;
    if bytes.len() < total {
        return Err(FormatError::Truncated {
            expected: total,
            got: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = HEADER_LEN + i * T::SIZE;
        data.push(T::get_le(&bytes[off..off + T::SIZE]));
    }
    let grid = Grid2D::from_vec(rows, cols, data).map_err(|_| FormatError::DimOverflow)?;
    Ok((grid, total))
}

pub fn decode_grid<T: Element>(bytes: &[u8]) -> Result<Grid2D<T>, FormatError> {
    let (grid, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FormatError::TrailingBytes {
            extra: bytes.len() - used,
        });
    }
    Ok(grid)
}

pub fn write_grid<T: Element>(path: &Path, grid: &Grid2D<T>) -> Result<(), FormatError> {
    let bytes = encode_grid(grid)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_grid<T: Element>(path: &Path) -> Result<Grid2D<T>, FormatError> {
    decode_grid(&fs::read(path)?)
}

/// File dtype without decoding the payload.
pub fn peek_dtype(path: &Path) -> Result<u8, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    Ok(bytes[5])
}

/// Writes named parameter-block records (checkpoint format).
pub fn write_named_grids<T: Element>(
    path: &Path,
    records: &[(String, Grid2D<T>)],
) -> Result<(), FormatError> {
    let mut out = Vec::new();
    for (name, grid) in records {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(FormatError::BadName);
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&encode_grid(grid)?);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_named_grids<T: Element>(path: &Path) -> Result<Vec<(String, Grid2D<T>)>, FormatError> {
    let bytes = fs::read(path)?;
    let mut records = Vec::new();
    let mut off = 0usize;
    while off < bytes.len() {
        if bytes.len() - off < 2 {
            return Err(FormatError::Truncated {
                expected: off + 2,
                got: bytes.len(),
            });
        }
        let name_len = u16::from_le_bytes([bytes[off], bytes[off + 1]]) as usize;
        off += 2;
        if bytes.len() - off < name_len {
            return Err(FormatError::Truncated {
                expected: off + name_len,
                got: bytes.len(),
            });
        }
        let name = std::str::from_utf8(&bytes[off..off + name_len])
            .map_err(|_| FormatError::BadName)?
            .to_string();
        off += name_len;
        let (grid, used) = decode_prefix(&bytes[off..])?;
        off += used;
        records.push((name, grid));
    }
    Ok(records)
}
