//! Run configuration: one TOML file covering every pipeline stage, each
//! section optional and individually defaulted. Command-line flags override
//! file values field by field; the effective configuration a command actually
//! used is echoed into its output directory.

use serde::{Deserialize, Serialize};
use ssb_core::bridge::SampleConfig;
use ssb_core::predictor::{ArchConfig, DownsampleKind, TrainConfig, UpsampleKind};
use ssb_core::schedule::ScheduleParams;
use ssb_core::synthdata::{DatasetConfig, Split};
use ssb_core::{Result, SsbError};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub n_steps: usize,
    pub total_variance: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { n_steps: 50, total_variance: 1.0 }
    }
}

impl ScheduleSection {
    pub fn to_params(self) -> ScheduleParams {
        ScheduleParams { n_steps: self.n_steps, total_variance: self.total_variance }
    }
}

/// Network shape knobs that are free to choose; grid size and label count are
/// always taken from the dataset so the two can never disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: [usize; 2],
    pub time_embed_dim: usize,
    pub groups: usize,
    pub down_kind: DownsampleKind,
    pub up_kind: UpsampleKind,
    pub residual: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = ArchConfig::default();
        ModelSection {
            channels: a.channels,
            time_embed_dim: a.time_embed_dim,
            groups: a.groups,
            down_kind: a.down_kind,
            up_kind: a.up_kind,
            residual: a.residual,
        }
    }
}

impl ModelSection {
    pub fn to_arch(self, grid_size: usize, eta: u32) -> ArchConfig {
        ArchConfig {
            grid_size,
            channels: self.channels,
            time_embed_dim: self.time_embed_dim,
            groups: self.groups,
            eta,
            down_kind: self.down_kind,
            up_kind: self.up_kind,
            residual: self.residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub omega: f64,
    pub nfe: usize,
    pub stochastic: bool,
    pub seed: u64,
    /// Masks drawn per record; conditioning labels cycle through the experts.
    pub num_samples: usize,
    pub split: Split,
}

impl Default for SampleSection {
    fn default() -> Self {
        let s = SampleConfig::default();
        SampleSection {
            omega: s.omega,
            nfe: s.nfe,
            stochastic: s.stochastic,
            seed: s.seed,
            num_samples: 4,
            split: Split::Test,
        }
    }
}

impl SampleSection {
    pub fn to_config(self) -> SampleConfig {
        SampleConfig {
            omega: self.omega,
            nfe: self.nfe,
            stochastic: self.stochastic,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DatasetConfig,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sample: SampleSection,
}

impl RunConfig {
    /// Defaults when no file is given; parse errors name the file.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(p) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(p)
            .map_err(|e| SsbError::io(p.display().to_string(), e))?;
        toml::from_str(&text)
            .map_err(|e| SsbError::InvalidArgument(format!("config {}: {e}", p.display())))
    }
}

/// Serialize a value as TOML and write it atomically.
pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| SsbError::InvalidArgument(format!("config encode: {e}")))?;
    ssb_core::pgm::atomic_write(path, text.as_bytes())
}
