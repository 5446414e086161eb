//! The `SSMAMP01` binary matrix format: 8-byte magic, `u32` row count, `u32`
//! column count (little-endian), then `rows * cols` little-endian `f64`
//! values in row-major order. Vectors are stored as single-column matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSMAMP01";

/// A raw matrix read from disk, before any ensemble information is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode(n_rows: usize, n_cols: usize, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != n_rows * n_cols {
        return Err(Error::Dimension(format!(
            "{} values for a {n_rows} x {n_cols} matrix",
            data.len()
        )));
    }
    let rows = u32::try_from(n_rows).map_err(|_| Error::Dimension("too many rows".into()))?;
    let cols = u32::try_from(n_cols).map_err(|_| Error::Dimension("too many columns".into()))?;
    let mut out = Vec::with_capacity(16 + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RawMatrix> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let n_rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n_cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    let expected = n_rows
        .checked_mul(n_cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(bad(format!(
            "expected {expected} payload bytes for {n_rows} x {n_cols}, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawMatrix {
        n_rows,
        n_cols,
        data,
    })
}

pub fn write_matrix(path: &Path, n_rows: usize, n_cols: usize, data: &[f64]) -> Result<()> {
    let bytes = encode(n_rows, n_cols, data)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_matrix(path: &Path) -> Result<RawMatrix> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    decode(&bytes, path)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_matrix(path, v.len(), 1, v)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let raw = read_matrix(path)?;
    if raw.n_cols != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected a single column, found {}", raw.n_cols),
        });
    }
    Ok(raw.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(&bytes[..8], b"SSMAMP01");
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[3, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 48);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let p = Path::new("mem");
        let mut bytes = encode(2, 2, &[1.0; 4]).unwrap();
        assert!(decode(&bytes[..20], p).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes, p).is_err());
        assert!(decode(&[0u8; 4], p).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .collect();
            let raw = decode(&encode(rows, cols, &data).unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(raw.n_rows, rows);
            prop_assert_eq!(raw.n_cols, cols);
            prop_assert_eq!(
                raw.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
