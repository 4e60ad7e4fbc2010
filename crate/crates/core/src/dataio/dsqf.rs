//! The DSQF matrix container.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `DSQF`              |
//! | 4      | 2    | format version (`1`)      |
//! | 6      | 2    | reserved (`0`)            |
//! | 8      | 4    | rows `T` (u32)            |
//! | 12     | 4    | cols `D` (u32)            |
//! | 16     | 4·T·D| `f32` payload, row-major  |

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"DSQF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(m: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Matrix<f32>, FormatError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(FormatError::BadMagic { found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let rows = u32_at(8);
    let cols = u32_at(12);
    if rows == 0 || cols == 0 {
        return Err(FormatError::EmptyDimension { rows, cols });
    }
    let payload = (rows as u64)
        .checked_mul(cols as u64)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or(FormatError::DimensionOverflow { rows, cols })?;
    let actual = bytes.len() as u64;
    if actual < payload {
        return Err(FormatError::Truncated {
            expected: payload,
            actual,
        });
    }
    if actual > payload {
        return Err(FormatError::TrailingBytes {
            extra: actual - payload,
        });
    }
    let mut data = Vec::with_capacity((rows as usize) * (cols as usize));
    for (index, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinitePayload { index });
        }
        data.push(v);
    }
    Ok(Matrix::from_vec(rows as usize, cols as usize, data))
}

/// Writes `m` as a DSQF file, converting to `f32`.
pub fn write_matrix<T: Scalar>(m: &Matrix<T>, path: &Path) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Shape(format!(
            "cannot store empty {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    let bytes = encode(&m.cast::<f32>());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let m = decode(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(m.cast())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_zero_is_twenty_bytes() {
        let bytes = encode(&Matrix::from_rows(&[vec![0.0f32]]));
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"DSQF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode(&Matrix::from_rows(&[vec![1.0f32, 2.0]]));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn truncation_reports_expected_and_actual() {
        let bytes = encode(&Matrix::from_rows(&[vec![1.0f32, 2.0, 3.0]]));
        let err = decode(&bytes[..bytes.len() - 2]).unwrap_err();
        assert_eq!(
            err,
            FormatError::Truncated {
                expected: 28,
                actual: 26
            }
        );
        assert!(err.to_string().contains("expected 28"));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut bytes = encode(&Matrix::from_rows(&[vec![1.0f32, 2.0]]));
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(
            decode(&bytes),
            Err(FormatError::NonFinitePayload { index: 1 })
        );
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut bytes = encode(&Matrix::from_rows(&[vec![1.0f32]]));
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert_eq!(
            err,
            FormatError::DimensionOverflow {
                rows: u32::MAX,
                cols: u32::MAX
            }
        );
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode(&Matrix::from_rows(&[vec![1.0f32]]));
        bytes[4] = 2;
        assert_eq!(decode(&bytes), Err(FormatError::UnsupportedVersion(2)));
    }
}
