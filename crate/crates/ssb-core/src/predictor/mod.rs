//! Noise predictors: the trait the sampler drives, analytic oracles used for
//! verification, and the trained network with its optimizer and checkpoint
//! format.

mod checkpoint;
mod oracle;
mod train;
mod unet;

pub use checkpoint::{
    config_digest, load_checkpoint, save_checkpoint, CheckpointHeader, LoadedCheckpoint,
};
pub use oracle::{DiracOracle, GaussianOracle};
pub use train::{train, Adam, TrainConfig, TrainItem, TrainOutcome};
pub use unet::{ArchConfig, DownsampleKind, LayoutEntry, TinyUNet, UpsampleKind};

use crate::error::{Result, SsbError};
use crate::grid::Grid;

/// Conditioning label selecting one expert's annotation style, 1-based.
/// The unconditional case is represented as `Option::None` at call sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExpertId(u32);

impl ExpertId {
    /// Expert ids start at 1; 0 is reserved for the null (unconditional) label.
    pub fn new(raw: u32) -> Result<ExpertId> {
        if raw == 0 {
            return Err(SsbError::InvalidArgument("expert id must be at least 1".into()));
        }
        Ok(ExpertId(raw))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// Predicts the bridge noise eps at a given step so that
/// x0_hat = x_t - sigma(step) * eps. `label = None` is the unconditional path.
///
/// Implementations must be pure: the same (x_t, label, step) always yields the
/// same output. Steps run 1..=n_steps; step 0 has no noise to predict.
pub trait Predictor {
    fn predict(&self, x_t: &Grid, label: Option<ExpertId>, step: usize) -> Result<Grid>;
}
