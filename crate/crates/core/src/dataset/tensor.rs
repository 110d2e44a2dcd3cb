//! `DLC1` tensor records.
//!
//! Layout: the 4 ASCII bytes `DLC1`, a little-endian `u32` row count, a
//! little-endian `u32` column count, then `rows * cols` little-endian `f32`
//! values in row-major order. Records may be concatenated back to back in
//! one file; [`TensorReader`] walks such a file.

use ndarray::Array2;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"DLC1";
const HEADER_LEN: usize = 12;

pub fn write_tensor_record(m: &Array2<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    append_tensor_record(&mut out, m);
    out
}

pub fn append_tensor_record(out: &mut Vec<u8>, m: &Array2<f32>) {
    let (rows, cols) = m.dim();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one record that must span `bytes` exactly.
pub fn read_tensor_record(bytes: &[u8]) -> Result<Array2<f32>> {
    let (m, used) = read_tensor_prefix(bytes, "tensor")?;
    if used != bytes.len() {
        return Err(Error::header(
            "tensor",
            format!("{} trailing bytes after record", bytes.len() - used),
        ));
    }
    Ok(m)
}

/// Decodes the record at the start of `bytes`, returning it and the number
/// of bytes it occupied.
pub fn read_tensor_prefix(bytes: &[u8], record: &str) -> Result<(Array2<f32>, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::header(record, "truncated header"));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::header(record, "bad magic, expected DLC1"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::header(record, "shape overflows"))?;
    let end = HEADER_LEN + payload;
    if bytes.len() < end {
        return Err(Error::header(
            record,
            format!(
                "truncated payload: need {payload} bytes, have {}",
                bytes.len() - HEADER_LEN
            ),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = Array2::from_shape_vec((rows, cols), data).expect("shape checked above");
    Ok((m, end))
}

/// Iterates over back-to-back records in one buffer.
pub struct TensorReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> TensorReader<'a> {
    pub fn new(bytes: &'a [u8], name: impl Into<String>) -> Self {
        Self {
            bytes,
            pos: 0,
            name: name.into(),
        }
    }
}

impl Iterator for TensorReader<'_> {
    type Item = Result<Array2<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.bytes.len() {
            return None;
        }
        match read_tensor_prefix(&self.bytes[self.pos..], &self.name) {
            Ok((m, used)) => {
                self.pos += used;
                Some(Ok(m))
            }
            Err(e) => {
                self.pos = self.bytes.len();
                Some(Err(e))
            }
        }
    }
}
