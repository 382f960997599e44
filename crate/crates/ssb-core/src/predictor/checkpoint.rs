//! Checkpoint container:
//!
//! ```text
//! bytes 0..4    magic "SSBC"
//! bytes 4..8    format version, u32 little endian (currently 1)
//! bytes 8..12   header length, u32 little endian
//! header        JSON: architecture, schedule params, training-config
//!               digest, parameter layout manifest, dtype, count
//! blob          param_count * 4 bytes, f32 little endian, layout order
//! ```
//!
//! Parameters are computed in f64 but stored as f32; loading re-expands.
//! Saving a loaded checkpoint reproduces the file byte for byte.

use crate::error::{Result, SsbError};
use crate::predictor::unet::{ArchConfig, LayoutEntry, TinyUNet};
use crate::pgm::atomic_write;
use crate::schedule::ScheduleParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSBC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub arch: ArchConfig,
    pub schedule: ScheduleParams,
    /// Hex SHA-256 of the training configuration that produced the weights.
    pub train_digest: String,
    pub layout: Vec<LayoutEntry>,
    pub param_dtype: String,
    pub param_count: usize,
}

pub struct LoadedCheckpoint {
    pub net: TinyUNet,
    pub schedule: ScheduleParams,
    pub header: CheckpointHeader,
}

/// Hex SHA-256 of a value's canonical JSON; used to fingerprint the training
/// config inside checkpoints.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&json);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    path: &Path,
    net: &TinyUNet,
    schedule: ScheduleParams,
    train_digest: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        arch: *net.arch(),
        schedule,
        train_digest: train_digest.to_string(),
        layout: net.layout().to_vec(),
        param_dtype: "f32".to_string(),
        param_count: net.params().len(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| SsbError::Checkpoint(format!("header encode: {e}")))?;
    let header_len = u32::try_from(header_json.len())
        .map_err(|_| SsbError::Checkpoint("header too large".into()))?;
    let mut bytes = Vec::with_capacity(12 + header_json.len() + net.params().len() * 4);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&header_len.to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in net.params() {
        bytes.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| SsbError::io(path.display().to_string(), e))?;
    let bad = |msg: String| SsbError::Checkpoint(msg);
    if bytes.len() < 12 {
        return Err(bad("file too short for header".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + header_len {
        return Err(bad("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| bad(format!("header parse: {e}")))?;
    if header.param_dtype != "f32" {
        return Err(bad(format!("unsupported param dtype {}", header.param_dtype)));
    }
    let blob = &bytes[12 + header_len..];
    if blob.len() != header.param_count * 4 {
        return Err(bad(format!(
            "parameter blob is {} bytes, header promises {}",
            blob.len(),
            header.param_count * 4
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let net = TinyUNet::from_params(header.arch, params)?;
    if net.layout() != header.layout.as_slice() {
        return Err(bad("layout manifest does not match architecture".into()));
    }
    header.schedule.build()?;
    Ok(LoadedCheckpoint { net, schedule: header.schedule, header })
}
