//! FMAT: a minimal little-endian float64 matrix container.
//!
//! Layout: magic `FMAT`, version `u32 = 1`, rows `u32`, cols `u32`, then
//! `rows * cols` IEEE-754 doubles in row-major order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMAT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(a: &Array2<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(a.nrows()).map_err(|_| Error::Domain("FMAT rows exceed u32".into()))?;
    let cols = u32::try_from(a.ncols()).map_err(|_| Error::Domain("FMAT cols exceed u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * a.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    // Logical row-major order regardless of memory layout.
    for v in a.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<Array2<f64>> {
    let bad = |reason: String| Error::Format {
        path: origin.to_string(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, expected {expected} for {rows}x{cols}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))
}

pub fn write_to<W: Write>(a: &Array2<f64>, mut w: W) -> Result<()> {
    w.write_all(&encode(a)?)?;
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf, "<stream>")
}

pub fn write_file(path: &Path, a: &Array2<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode(a)?)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| {
        io::Error::new(e.kind(), format!("{}: {e}", path.display()))
    })?;
    decode(&bytes, &path.display().to_string())
}

/// Stores a vector as a 1×N matrix.
pub fn write_row(path: &Path, v: &[f64]) -> Result<()> {
    let a = Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("1xN shape");
    write_file(path, &a)
}

pub fn read_row(path: &Path) -> Result<Vec<f64>> {
    let a = read_file(path)?;
    if a.nrows() != 1 {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected a single row, found {}", a.nrows()),
        });
    }
    Ok(a.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode(&array![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(&bytes[..4], b"FMAT");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[3, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
    }

    #[test]
    fn row_major_even_for_transposed_views() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let t = a.t().to_owned();
        let back = decode(&encode(&a.t().as_standard_layout().to_owned()).unwrap(), "t").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode(&array![[1.0]]).unwrap();
        assert!(decode(&bytes[..20], "short").is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes, "magic").is_err());
        let mut v2 = encode(&array![[1.0]]).unwrap();
        v2[4] = 2;
        assert!(decode(&v2, "version").is_err());
    }

    #[test]
    fn empty_matrix() {
        let a = Array2::<f64>::zeros((0, 5));
        assert_eq!(decode(&encode(&a).unwrap(), "e").unwrap().dim(), (0, 5));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 0usize..6, cols in 0usize..6, bits in proptest::collection::vec(any::<u64>(), 36)) {
            let a = Array2::from_shape_fn((rows, cols), |(i, j)| f64::from_bits(bits[i * 6 + j]));
            let b = decode(&encode(&a).unwrap(), "p").unwrap();
            prop_assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
