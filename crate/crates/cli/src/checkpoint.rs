//! Binary checkpoint: magic, format version, JSON manifest, little-endian f64 payload.
//!
//! ```text
//! b"SKIPLAB\n" | u32 version | u64 manifest length | manifest JSON | payload
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use skiplab_core::autodiff::Tensor;
use skiplab_core::data::ChannelStats;
use skiplab_core::network::SkipNet;
use skiplab_core::training::TrainerState;
use thiserror::Error;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"SKIPLAB\n";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("manifest does not parse: {0}")]
    Manifest(String),
    #[error("tensor {name} has shape {found:?} in the file but the architecture needs {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Refine,
    Sdv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Momentum,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: RunConfig,
    stats: ChannelStats,
    stage: Stage,
    trainer: Option<TrainerState>,
    tensors: Vec<Entry>,
    payload_bytes: u64,
}

/// A trained network with everything needed to evaluate it or continue training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub stats: ChannelStats,
    pub stage: Stage,
    pub trainer: Option<TrainerState>,
    pub net: SkipNet<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let ps = self.net.params();
        let mut tensors = Vec::new();
        let mut payload = Vec::with_capacity(ps.num_scalars() * 16);
        let mut push = |name: &str, role: Role, t: &Tensor<f64>| {
            tensors.push(Entry { name: name.to_string(), role, shape: t.shape().to_vec(), offset: payload.len() as u64 });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for p in ps.iter() {
            push(&p.name, Role::Param, &p.value);
        }
        for p in ps.iter() {
            push(&p.name, Role::Momentum, &p.momentum);
        }
        for b in ps.buffers() {
            push(&b.name, Role::Buffer, &b.value);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            stats: self.stats.clone(),
            stage: self.stage,
            trainer: self.trainer.clone(),
            tensors,
            payload_bytes: payload.len() as u64,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and validates the whole file before building anything.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::NotACheckpoint);
        }
        if bytes.len() < PREFIX {
            return Err(CheckpointError::Truncated { expected: PREFIX as u64, found: bytes.len() as u64 });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = (PREFIX as u64).saturating_add(mlen);
        if (bytes.len() as u64) < header_end {
            return Err(CheckpointError::Truncated { expected: header_end, found: bytes.len() as u64 });
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[PREFIX..header_end as usize])
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        if manifest.format_version != version {
            return Err(CheckpointError::Version { found: manifest.format_version, expected: FORMAT_VERSION });
        }
        let payload = &bytes[header_end as usize..];
        let expected = header_end + manifest.payload_bytes;
        if payload.len() as u64 != manifest.payload_bytes {
            return Err(CheckpointError::Truncated { expected, found: bytes.len() as u64 });
        }

        let mut net = SkipNet::<f64>::new(manifest.config.network(), 0)
            .map_err(|e| CheckpointError::Manifest(format!("architecture: {e}")))?;
        let ps = net.params();
        let mut expected_entries = Vec::new();
        for p in ps.iter() {
            expected_entries.push((p.name.clone(), Role::Param, p.value.shape().to_vec()));
        }
        for p in ps.iter() {
            expected_entries.push((p.name.clone(), Role::Momentum, p.value.shape().to_vec()));
        }
        for b in ps.buffers() {
            expected_entries.push((b.name.clone(), Role::Buffer, b.value.shape().to_vec()));
        }
        if expected_entries.len() != manifest.tensors.len() {
            return Err(CheckpointError::Manifest(format!(
                "{} tensors listed, the architecture has {}",
                manifest.tensors.len(),
                expected_entries.len()
            )));
        }
        let mut offset = 0u64;
        let mut values = Vec::with_capacity(expected_entries.len());
        for ((name, role, shape), e) in expected_entries.iter().zip(&manifest.tensors) {
            if &e.name != name || e.role != *role {
                return Err(CheckpointError::Manifest(format!(
                    "expected {role:?} {name} at this position, found {:?} {}",
                    e.role, e.name
                )));
            }
            if &e.shape != shape {
                return Err(CheckpointError::Shape { name: name.clone(), expected: shape.clone(), found: e.shape.clone() });
            }
            if e.offset != offset {
                return Err(CheckpointError::Manifest(format!("{name}: offset {} where {offset} was expected", e.offset)));
            }
            let len = shape.iter().product::<usize>() as u64 * 8;
            let end = offset + len;
            if end > payload.len() as u64 {
                return Err(CheckpointError::Truncated { expected: header_end + end, found: bytes.len() as u64 });
            }
            let data: Vec<f64> = payload[offset as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            values.push(Tensor::new(shape, data).expect("shape checked"));
            offset = end;
        }
        if offset != manifest.payload_bytes {
            return Err(CheckpointError::Manifest(format!(
                "tensors cover {offset} payload bytes, manifest declares {}",
                manifest.payload_bytes
            )));
        }
        let mut values = values.into_iter();
        let ps = net.params_mut();
        for p in ps.iter_mut() {
            p.value = values.next().expect("counted");
        }
        for p in ps.iter_mut() {
            p.momentum = values.next().expect("counted");
        }
        for b in ps.buffers_mut() {
            b.value = values.next().expect("counted");
        }
        Ok(Checkpoint { config: manifest.config, stats: manifest.stats, stage: manifest.stage, trainer: manifest.trainer, net })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|source| CliError::Checkpoint { path: path.to_path_buf(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use skiplab_core::network::GateKind;

    fn sample() -> Checkpoint {
        let config = RunConfig { n: 1, group_widths: vec![4, 8], gate_kind: GateKind::RnnGate, input_geometry: (3, 8, 8), ..Default::default() };
        let mut net = SkipNet::new(config.network(), 3).unwrap();
        for p in net.params_mut().iter_mut() {
            p.momentum = p.value.map(|v| v * 0.5 - 1e-300);
        }
        Checkpoint {
            config,
            stats: ChannelStats { mean: vec![1.0, 2.0, 3.0], std: vec![0.1, 0.2, 0.3] },
            stage: Stage::Pretrain,
            trainer: Some(TrainerState { step: 7, rng_word_pos: 1 << 70, baseline: vec![0.25, -1.5] }),
            net,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.net.params(), c.net.params());
        assert_eq!(back.trainer, c.trainer);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes();
        let mut v = bytes.clone();
        v[8] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Version { .. })));
        let mut v = bytes.clone();
        v[PREFIX] = b'[';
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Manifest(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(Checkpoint::from_bytes(b"PK\x03\x04 not ours"), Err(CheckpointError::NotACheckpoint)));

        let text = String::from_utf8_lossy(&bytes[PREFIX..]).into_owned();
        let needle = "\"name\":\"fc.bias\",\"role\":\"param\",\"shape\":[10]";
        assert!(text.contains(needle));
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let manifest = std::str::from_utf8(&bytes[PREFIX..PREFIX + mlen]).unwrap().replace(needle, "\"name\":\"fc.bias\",\"role\":\"param\",\"shape\":[11]");
        let mut v = bytes[..12].to_vec();
        v.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        v.extend_from_slice(manifest.as_bytes());
        v.extend_from_slice(&bytes[PREFIX + mlen..]);
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Shape { .. })));
    }
}
