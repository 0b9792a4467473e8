//! Flat little-endian 64-bit float binary files, the storage format shared
//! by dataset arrays and model checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: truncated or oversized binary, expected {expected} f64 values, found {got}")]
    LengthMismatch {
        path: String,
        expected: usize,
        got: usize,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> BinError {
    BinError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_f64(path: &Path, values: &[f64]) -> Result<(), BinError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read exactly `expected` values; a file of any other length is reported as
/// a truncation/size error.
pub fn read_f64_exact(path: &Path, expected: usize) -> Result<Vec<f64>, BinError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(BinError::LengthMismatch {
            path: path.display().to_string(),
            expected,
            got: bytes.len() / 8,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        let vals = vec![0.0, -1.5, std::f64::consts::PI, 1e-300, -0.0];
        write_f64(&path, &vals).unwrap();
        let back = read_f64_exact(&path, vals.len()).unwrap();
        for (a, b) in vals.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        write_f64(&path, &[1.0, 2.0]).unwrap();
        assert!(matches!(
            read_f64_exact(&path, 3),
            Err(BinError::LengthMismatch { expected: 3, got: 2, .. })
        ));
    }
}
