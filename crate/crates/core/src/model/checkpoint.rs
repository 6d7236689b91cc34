//! Checkpoint serialization.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic bytes  b"CTAG"
//!        4   u32          format version (currently 1)
//!        8   u32          config JSON byte length
//!        12  [u8]         config as compact JSON (serde field order)
//!        ..  u64          FNV-1a hash of the tokenizer vocabulary file
//!        ..  [f64]        parameters in `ClassifierModel::params()` order
//! ```
//!
//! Loading is strict: bad magic, unknown version, short reads, and trailing
//! bytes are all distinct errors.

use std::path::Path;

use super::{count_parameters, ClassifierModel, ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTAG";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &ClassifierModel, path: &Path) -> Result<(), ModelError> {
    let config_json =
        serde_json::to_string(model.config()).expect("config serializes to canonical JSON");
    let params = model.params();
    let total: usize = params.iter().map(|t| t.numel()).sum();

    let mut bytes =
        Vec::with_capacity(4 + 4 + 4 + config_json.len() + 8 + total * std::mem::size_of::<f64>());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(config_json.as_bytes());
    bytes.extend_from_slice(&model.vocab_hash().to_le_bytes());
    for tensor in params {
        for value in tensor.data() {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Truncated {
                expected: self.pos + n - self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::NotACheckpoint);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch(version));
    }
    let config_len = r.u32()? as usize;
    let config_bytes = r.take(config_len)?;
    let config: ModelConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
    config.validate()?;
    let vocab_hash = r.u64()?;

    let count = count_parameters(&config) as usize;
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        flat.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
    }
    if r.pos != bytes.len() {
        return Err(ModelError::TrailingBytes(bytes.len() - r.pos));
    }
    ClassifierModel::from_flat(config, vocab_hash, &flat)
}
