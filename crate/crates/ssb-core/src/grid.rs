//! Dense 2D f64 grid, row-major. The single pixel container used everywhere:
//! images, masks, noise fields, network inputs and outputs.
//!
//! All arithmetic helpers require matching shapes and return `InvalidArgument`
//! otherwise; nothing here broadcasts.

use crate::error::{Result, SsbError};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    /// Zero-filled grid. Dimensions must be nonzero.
    pub fn zeros(height: usize, width: usize) -> Grid {
        assert!(height > 0 && width > 0, "grid dimensions must be nonzero");
        Grid { height, width, data: vec![0.0; height * width] }
    }

    /// Constant-filled grid.
    pub fn constant(height: usize, width: usize, value: f64) -> Grid {
        let mut g = Grid::zeros(height, width);
        g.data.fill(value);
        g
    }

    /// Wrap an existing row-major buffer. Length must equal height*width.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Grid> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(SsbError::InvalidArgument(format!(
                "grid buffer length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Grid { height, width, data })
    }

    /// Standard normal field, one draw per pixel in row-major order.
    pub fn randn<R: Rng>(height: usize, width: usize, rng: &mut R) -> Grid {
        let data = (0..height * width).map(|_| rng.sample(StandardNormal)).collect();
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Error unless `other` has this grid's shape; `what` names the operand pair.
    pub fn check_same_shape(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SsbError::InvalidArgument(format!(
                "{what}: shape mismatch {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combine; shapes must match.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every pixel is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}
