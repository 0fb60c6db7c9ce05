//! Binary feature files, little-endian throughout:
//!
//! ```text
//! "MMVF" | version u32 | rank u32 | rank x dim u32 | dtype u8 (1 = f32)
//! | row_count u64 | row_count x prod(dims) f32 | crc32 u32 of all preceding bytes
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MMVF";
pub const FEATURE_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

/// Rows of identically shaped f32 feature blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FeatureFile {
    pub fn new(shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("invalid row shape {shape:?}")));
        }
        Ok(Self { shape, data: Vec::new() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn row_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.row_len()
    }

    /// Appends a row and returns its offset.
    pub fn push_row(&mut self, row: &[f32]) -> Result<u64> {
        if row.len() != self.row_len() {
            return Err(Error::shape(format!("row of {} values for shape {:?}", row.len(), self.shape)));
        }
        self.data.extend_from_slice(row);
        Ok(self.rows() as u64 - 1)
    }

    /// Narrows f64 values to f32.
    pub fn push_row_f64(&mut self, row: &[f64]) -> Result<u64> {
        let narrowed: Vec<f32> = row.iter().map(|&v| v as f32).collect();
        self.push_row(&narrowed)
    }

    pub fn row(&self, offset: usize) -> Option<&[f32]> {
        let n = self.row_len();
        self.data.get(offset * n..(offset + 1) * n)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + 4 * self.data.len());
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.push(DTYPE_F32);
        buf.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() >= 4 && &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::format(path, "not an MMVF feature file"));
        }
        if bytes.len() < 12 {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FEATURE_VERSION {
            return Err(Error::FormatVersionMismatch { found: version, expected: FEATURE_VERSION });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let bad = |why: &str| Error::format(path, why.to_owned());
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body.get(pos..pos + n).ok_or_else(|| bad("unexpected end of data"))?;
            pos += n;
            Ok(s)
        };
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if rank == 0 || rank > 8 {
            return Err(bad("unsupported rank"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        if take(1)?[0] != DTYPE_F32 {
            return Err(bad("unsupported dtype"));
        }
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut file = FeatureFile::new(shape)?;
        let expected = rows.checked_mul(file.row_len()).and_then(|n| n.checked_mul(4)).ok_or_else(|| bad("payload size overflows"))?;
        let payload = take(expected)?;
        if pos != body.len() {
            return Err(bad("payload length does not match the declared shape"));
        }
        file.data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}
