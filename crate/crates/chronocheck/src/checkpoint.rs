//! Versioned binary checkpoints.
//!
//! All integers are little-endian.
//!
//! | field            | bytes                                   |
//! |------------------|-----------------------------------------|
//! | magic            | `CHRONOCK` (8)                          |
//! | format version   | u32                                     |
//! | config length    | u32                                     |
//! | config           | UTF-8 JSON of the model configuration   |
//! | tensor count     | u32                                     |
//! | per tensor       | u16 name length, name, u8 rank, u32 dims, f64 values |
//! | checksum         | u32 CRC-32 of every preceding byte      |
//!
//! Tensors appear in the model's parameter order; loading matches them by
//! name and shape, so a checkpoint from a different configuration is
//! rejected with the offending tensor named.

use std::fs;
use std::path::{Path, PathBuf};

use chronocheck_core::model::{ModelWeights, NamedTensor};
use chronocheck_core::{Model, ModelConfig, ModelError};

pub const MAGIC: &[u8; 8] = b"CHRONOCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads {FORMAT_VERSION})")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn encode(w: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&w.config).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(w.tensors.len() as u32).to_le_bytes());
    for t in &w.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelWeights, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut c = Cursor { buf: body, pos: 12 };
    let n = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(n)?).map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes"))).collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    if c.pos != body.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - c.pos)));
    }
    Ok(ModelWeights { config, tensors })
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(&model.weights())).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Model::from_weights(&decode(&bytes)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chronocheck_core::world::generate_dataset;

    fn small() -> Model {
        Model::new(ModelConfig {
            image_size: 8,
            backbone_channels: vec![2, 2],
            ta_branches: true,
            ..ModelConfig::miniature()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_reproduces_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = small();
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.weights(), m.weights());
        let data = generate_dataset(1, 3, 2, 8);
        let refs: Vec<_> = data.iter().collect();
        let tuples: Vec<_> = (0..3).map(|i| (i, data[i].timestamp)).collect();
        assert_eq!(back.predict(&refs, &tuples).unwrap(), m.predict(&refs, &tuples).unwrap());
        assert_eq!(&fs::read(&p).unwrap()[..8], MAGIC);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&small().weights());
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode(&flipped), Err(CheckpointError::Checksum { .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 9]), Err(CheckpointError::Checksum { .. })));
        assert!(matches!(decode(b"CHRONO"), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(b"NOTACKPT00000000"), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode(&v2), Err(CheckpointError::Version(2))));
    }

    #[test]
    fn config_mismatch_names_the_tensor() {
        let mut w = small().weights();
        let t = w.tensors.iter_mut().find(|t| t.name == "attr_ground.head.weight").unwrap();
        t.shape[0] += 1;
        t.data.extend(std::iter::repeat(0.0).take(t.shape[1]));
        let err = Model::from_weights(&decode(&encode(&w)).unwrap()).unwrap_err();
        assert!(err.to_string().contains("attr_ground.head.weight"));
    }
}
