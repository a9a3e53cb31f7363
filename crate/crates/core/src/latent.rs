//! Flat real-valued grids: the space where initial noises, intermediate
//! latents and decoded images live.

use crate::error::{Error, Result};
use std::fmt;

/// Grid dimensions `(channels, height, width)` with `d = c * h * w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    /// Total coordinate count `d`.
    pub const fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl fmt::Display for LatentShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.channels, self.height, self.width)
    }
}

/// A `d`-dimensional real grid stored row-major.
///
/// All sampler and watermark operations assume every entry is finite; the
/// checked constructor enforces it at the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    shape: LatentShape,
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros(shape: LatentShape) -> Self {
        Self { shape, data: vec![0.0; shape.dim()] }
    }

    pub fn from_vec(shape: LatentShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.dim() {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match shape {} with d = {}",
                data.len(),
                shape,
                shape.dim()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("latent construction".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { expected: self.shape, got: other.shape });
        }
        Ok(())
    }

    /// `a * self`, elementwise.
    pub fn scaled(&self, a: f64) -> Latent {
        Latent { shape: self.shape, data: self.data.iter().map(|v| a * v).collect() }
    }

    /// `self += a * other`, elementwise.
    pub fn add_scaled(&mut self, a: f64, other: &Latent) -> Result<()> {
        self.same_shape(other)?;
        for (x, y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += a * y;
        }
        Ok(())
    }

    /// `a * x + b * y`, elementwise.
    pub fn lin_comb(a: f64, x: &Latent, b: f64, y: &Latent) -> Result<Latent> {
        x.same_shape(y)?;
        let data = x
            .data
            .iter()
            .zip(y.data.iter())
            .map(|(xi, yi)| a * xi + b * yi)
            .collect();
        Ok(Latent { shape: x.shape, data })
    }

    pub fn sub(&self, other: &Latent) -> Result<Latent> {
        Latent::lin_comb(1.0, self, -1.0, other)
    }

    pub fn dot(&self, other: &Latent) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dist_l2(&self, other: &Latent) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A decoded pixel-space grid. Same storage as [`Latent`]; the newtype keeps
/// latent-space and image-space values from being mixed up in the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(pub Latent);

impl Image {
    pub fn shape(&self) -> LatentShape {
        self.0.shape()
    }

    pub fn as_latent(&self) -> &Latent {
        &self.0
    }
}
