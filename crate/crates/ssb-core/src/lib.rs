//! Bridge-based ambiguous segmentation on a desk-scale budget: a noise
//! schedule and analytic bridge posterior, a reverse sampler with
//! classifier-free guidance, a compact UNet noise predictor trained with a
//! hand-written backward pass, mask quality and diversity metrics, and a
//! deterministic synthetic dataset of expert-annotated blobs.
//!
//! Everything is f64 in memory, seeded through named RNG streams, and
//! reproducible bit for bit at any thread count.

pub mod bridge;
pub mod error;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod pgm;
pub mod predictor;
pub mod rng;
pub mod schedule;
pub mod synthdata;

pub use error::{Result, SsbError};
pub use grid::Grid;
