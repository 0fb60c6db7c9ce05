//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "MMVA" | version u32 | meta_len u32 | meta JSON (meta_len bytes)
//! | param_count u32
//! | param_count x ( name_len u32 | name | rank u32 | rank x dim u64 | f64 values )
//! | crc32 u32 over every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::matching::SigmaStats;
use crate::model::{MmvaModel, ModelConfig};
use crate::nn::Tensor2;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMVA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub sigma: Option<SigmaStats>,
    pub seed: Option<u64>,
    /// Left empty unless the caller supplies one, so that equal runs write
    /// equal bytes.
    pub created: Option<String>,
}

impl CheckpointMeta {
    pub fn new(model: ModelConfig) -> Self {
        Self { model, train: None, sigma: None, seed: None, created: None }
    }
}

pub fn encode_checkpoint(model: &MmvaModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.model != *model.config() {
        return Err(Error::Config("checkpoint metadata does not describe this model".into()));
    }
    let meta_json = serde_json::to_vec(meta)?;
    let params = model.params();
    let mut buf = Vec::with_capacity(16 + meta_json.len() + params.iter().map(|p| 32 + p.name.len() + 8 * p.len()).sum::<usize>());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(MmvaModel, CheckpointMeta)> {
    if bytes.len() >= 4 && &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not an MMVA checkpoint"));
    }
    if bytes.len() < 12 {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::FormatVersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }

    let mut r = Reader { buf: body, pos: 8, path };
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
    let mut model = MmvaModel::zeros(meta.model)?;
    let expected = model.params().len();
    let count = r.u32()? as usize;
    if count != expected {
        return Err(Error::format(path, format!("{count} parameters stored, model has {expected}")));
    }
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::format(path, "parameter name is not UTF-8"))?.to_owned();
        let rank = r.u32()?;
        if rank != 2 {
            return Err(Error::format(path, format!("parameter `{name}` has rank {rank}")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::format(path, "parameter too large"))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let p = model.param_mut(&name).ok_or_else(|| Error::format(path, format!("unknown parameter `{name}`")))?;
        if p.value.shape() != (rows, cols) {
            return Err(Error::format(path, format!("parameter `{name}` is {rows}x{cols}, model expects {:?}", p.value.shape())));
        }
        p.value = Tensor2::from_vec(rows, cols, values)?;
    }
    if r.pos != body.len() {
        return Err(Error::format(path, "trailing bytes after the last parameter"));
    }
    Ok((model, meta))
}

pub fn save_checkpoint(model: &MmvaModel, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MmvaModel, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::rng::SeededRng;
    use crate::types::FeatureDims;

    fn small_model() -> MmvaModel {
        let cfg = ModelConfig {
            dims: ModelDims { features: FeatureDims { image_dim: 4, layers: 2, token_dim: 3 }, embed_dim: 4, hidden_dim: 5 },
            ..Default::default()
        };
        MmvaModel::new(cfg, &mut SeededRng::new(3)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = small_model();
        let mut meta = CheckpointMeta::new(*m.config());
        meta.seed = Some(3);
        meta.sigma = Some(SigmaStats::from_value(0.37, 10, 12).unwrap());
        let bytes = encode_checkpoint(&m, &meta).unwrap();
        let (back, meta_back) = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(meta_back, meta);
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor2| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(encode_checkpoint(&back, &meta_back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_corruption_fail_the_checksum() {
        let m = small_model();
        let bytes = encode_checkpoint(&m, &CheckpointMeta::new(*m.config())).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 13, 6] {
            assert!(matches!(decode_checkpoint(&bytes[..cut], Path::new("t")), Err(Error::ChecksumMismatch(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(decode_checkpoint(&flipped, Path::new("t")), Err(Error::ChecksumMismatch(_))));
    }

    #[test]
    fn other_versions_are_refused() {
        let m = small_model();
        let mut bytes = encode_checkpoint(&m, &CheckpointMeta::new(*m.config())).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes, Path::new("v")), Err(Error::FormatVersionMismatch { found: 2, expected: 1 })));
    }
}
