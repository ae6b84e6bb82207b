//! `TSM1` dense matrix files.
//!
//! Layout (little-endian): the magic `TSM1`, `u32` rows, `u32` cols, a `u8`
//! dtype tag (1 = `f32`, 2 = `f64`), then the row-major payload. Streams,
//! embeddings, label tracks, predictions and checkpoint tensors all use it.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSM1";
const HEADER_LEN: usize = 4 + 4 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown TSM1 dtype tag {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serializes `m` into a writer.
pub fn write_matrix<W: Write>(out: &mut W, m: ArrayView2<'_, f64>, dtype: Dtype) -> std::io::Result<()> {
    let (rows, cols) = m.dim();
    let rows = u32::try_from(rows).map_err(|_| std::io::Error::other("too many rows for TSM1"))?;
    let cols = u32::try_from(cols).map_err(|_| std::io::Error::other("too many cols for TSM1"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + m.len() * dtype.width());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.push(dtype as u8);
    for &v in m.iter() {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out.write_all(&buf)
}

/// Parses one matrix from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_matrix(bytes: &[u8]) -> Result<(Array2<f64>, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated TSM1 header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad TSM1 magic".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dtype = Dtype::from_tag(bytes[12])?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("TSM1 shape overflows".into()))?;
    let payload_len = n * dtype.width();
    let payload = bytes
        .get(HEADER_LEN..HEADER_LEN + payload_len)
        .ok_or_else(|| Error::Format(format!("TSM1 payload truncated: expected {rows}x{cols}")))?;
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let m = Array2::from_shape_vec((rows, cols), values).expect("length checked above");
    Ok((m, HEADER_LEN + payload_len))
}

pub fn read_matrix<R: Read>(input: &mut R) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("reading TSM1: {e}")))?;
    let (m, used) = decode_matrix(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after TSM1 payload",
            bytes.len() - used
        )));
    }
    Ok(m)
}

pub fn save(path: &Path, m: ArrayView2<'_, f64>, dtype: Dtype) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix(&mut buf, m, dtype).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_matrix(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_layout_is_fixed() {
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let mut buf = Vec::new();
        write_matrix(&mut buf, m.view(), Dtype::F64).unwrap();
        assert_eq!(&buf[..4], b"TSM1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(buf[12], 2);
        assert_eq!(buf.len(), 13 + 6 * 8);
        // row-major: second value is m[0][1]
        assert_eq!(f64::from_le_bytes(buf[21..29].try_into().unwrap()), 2.0);
    }

    #[test]
    fn f32_payload_roundtrips_representable_values() {
        let m = array![[0.5, -1.25], [3.0, 1e-3f32 as f64]];
        let mut buf = Vec::new();
        write_matrix(&mut buf, m.view(), Dtype::F32).unwrap();
        assert_eq!(buf.len(), 13 + 4 * 4);
        let back = read_matrix(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = array![[1.0]];
        let mut buf = Vec::new();
        write_matrix(&mut buf, m.view(), Dtype::F64).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_matrix(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_matrix(&mut &short[..]), Err(Error::Format(_))));
        let mut bad_dtype = buf.clone();
        bad_dtype[12] = 9;
        assert!(matches!(read_matrix(&mut bad_dtype.as_slice()), Err(Error::Format(_))));
    }
}
