//! Weight file container.
//!
//! ```text
//! "POCT"                      4 bytes magic
//! version                     u32 LE (= 1)
//! task                        u8 (anomaly 0, dry 1, wet 2, dme 3, quality 4)
//! input height, input width   u32 LE each
//! block count                 u32 LE
//!   channels, convs           u32 LE each, per block
//! dense units                 u32 LE
//! init seed                   u64 LE
//! parameter count             u32 LE
//! parameters                  f32 LE, network layer order
//! crc32                       u32 LE over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::config::{ConvBlock, ModelConfig};
use super::TrainedModel;
use crate::domain::ModelTask;
use crate::error::ModelError;

pub const MAGIC: &[u8; 4] = b"POCT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_weights(model: &TrainedModel) -> Vec<u8> {
    let cfg = model.config();
    let mut buf = Vec::with_capacity(64 + 4 * model.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(model.task().code());
    let mut put = |v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    put(cfg.input_size.0);
    put(cfg.input_size.1);
    put(cfg.conv_blocks.len());
    for b in &cfg.conv_blocks {
        put(b.channels);
        put(b.convs);
    }
    put(cfg.dense_units);
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&(model.param_count() as u32).to_le_bytes());
    for w in model.weights() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ModelError::CorruptFile(format!("truncated while reading {what}")));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn size(&mut self, what: &str) -> Result<usize, ModelError> {
        self.u32(what).map(|v| v as usize)
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<TrainedModel, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(ModelError::CorruptFile("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < 4 + 4 + 4 {
        return Err(ModelError::CorruptFile("truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(ModelError::CorruptFile("checksum mismatch".into()));
    }
    // Parse only the checksummed body from here on.
    let mut r = Reader { bytes: body, pos: r.pos };

    let code = r.take(1, "task")?[0];
    let task = ModelTask::from_code(code).ok_or_else(|| ModelError::CorruptFile(format!("unknown task code {code}")))?;
    let h = r.size("input height")?;
    let w = r.size("input width")?;
    let n_blocks = r.size("block count")?;
    if n_blocks > 32 {
        return Err(ModelError::CorruptFile(format!("implausible block count {n_blocks}")));
    }
    let mut conv_blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let channels = r.size("block channels")?;
        let convs = r.size("block convs")?;
        conv_blocks.push(ConvBlock { channels, convs });
    }
    let dense_units = r.size("dense units")?;
    let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().expect("8 bytes"));
    let config = ModelConfig { input_size: (h, w), conv_blocks, dense_units, seed };
    config
        .validate()
        .map_err(|e| ModelError::CorruptFile(format!("stored config is invalid: {e}")))?;

    let count = r.size("parameter count")?;
    let expected = super::Network::new(&config).param_count();
    if count != expected {
        return Err(ModelError::CorruptFile(format!("{count} parameters stored, config implies {expected}")));
    }
    let raw = r.take(count * 4, "parameters")?;
    if r.pos != body.len() {
        return Err(ModelError::CorruptFile("trailing bytes".into()));
    }
    let weights: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(ModelError::CorruptFile("non-finite parameter".into()));
    }
    Ok(TrainedModel::from_parts(config, task, weights))
}

pub fn save_weights(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, write_weights(model)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_weights(path: &Path) -> Result<TrainedModel, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    read_weights(&bytes)
}
