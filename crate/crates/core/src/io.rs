//! Little-endian binary matrices: `(rows, cols)` as u64, then f32 rows.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Mat;

pub fn encode_f32_matrix(m: &Mat, out: &mut Vec<u8>) {
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for x in m.iter() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

/// Decodes one matrix, requiring the buffer to hold exactly that.
pub fn decode_f32_matrix(bytes: &[u8]) -> Result<Mat, String> {
    let mut cursor = bytes;
    let m = read_f32_matrix_from(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(format!("{} trailing bytes", cursor.len()));
    }
    Ok(m)
}

/// Decodes one matrix from the front of `cursor`, advancing it.
pub fn read_f32_matrix_from(cursor: &mut &[u8]) -> Result<Mat, String> {
    let rows = read_u64(cursor)? as usize;
    let cols = read_u64(cursor)? as usize;
    let len = rows.checked_mul(cols).ok_or("matrix size overflows")?;
    let need = len.checked_mul(4).ok_or("matrix size overflows")?;
    if cursor.len() < need {
        return Err(format!("expected {need} payload bytes, found {}", cursor.len()));
    }
    let (payload, rest) = cursor.split_at(need);
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    *cursor = rest;
    Mat::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())
}

pub fn read_u64(cursor: &mut &[u8]) -> Result<u64, String> {
    if cursor.len() < 8 {
        return Err("unexpected end of file".into());
    }
    let (head, rest) = cursor.split_at(8);
    *cursor = rest;
    Ok(u64::from_le_bytes(head.try_into().unwrap()))
}

pub fn write_f32_matrix(path: &Path, m: &Mat) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * m.len());
    encode_f32_matrix(m, &mut buf);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_f32_matrix(path: &Path) -> std::io::Result<Mat> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_f32_matrix(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_truncation() {
        let m = Mat::from_shape_vec((2, 3), vec![1.0, -2.5, 0.0, 3.25, 1e-3, 7.0]).unwrap();
        let mut buf = Vec::new();
        encode_f32_matrix(&m, &mut buf);
        assert_eq!(buf.len(), 16 + 24);
        let back = decode_f32_matrix(&buf).unwrap();
        assert_eq!(back.dim(), (2, 3));
        assert!((back[[1, 1]] - 1e-3).abs() < 1e-9);
        assert!(decode_f32_matrix(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(decode_f32_matrix(&buf).is_err());
    }
}
