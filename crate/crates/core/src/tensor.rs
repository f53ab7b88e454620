use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, standard_normal_f32};

/// Channel/height/width extents of a latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::config(format!(
                "latent shape {:?} must be positive",
                self.dims()
            )));
        }
        Ok(())
    }
}

impl Default for Shape {
    fn default() -> Self {
        Shape::new(4, 32, 32)
    }
}

/// A real-valued `[C, H, W]` latent stored row-major in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::Format {
                what: "latent tensor",
                reason: format!(
                    "data length {} does not match shape {:?}",
                    data.len(),
                    shape.dims()
                ),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent tensor"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Builds a tensor from `f64` values, rounding to `f32`.
    pub fn from_f64(shape: Shape, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.dims(),
                actual: self.shape.dims(),
            });
        }
        Ok(())
    }

    pub fn scale(&self, a: f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }

    /// Returns `a * self + b * other`.
    pub fn axpby(&self, a: f32, other: &LatentTensor, b: f32) -> Result<Self> {
        other.ensure_shape(self.shape)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self::new(self.shape, data)
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> Result<f32> {
        other.ensure_shape(self.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Cosine similarity of the flattened tensors.
    pub fn cosine(&self, other: &LatentTensor) -> Result<f64> {
        other.ensure_shape(self.shape)?;
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a as f64, b as f64);
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if na == 0.0 || nb == 0.0 {
            return Err(Error::ZeroNorm("tensor cosine"));
        }
        Ok(dot / (na.sqrt() * nb.sqrt()))
    }

    /// Little-endian bytes of the row-major data.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Draws an i.i.d. standard normal latent from the ChaCha20 stream for `seed`.
pub fn sample_latent(seed: u64, shape: Shape) -> Result<LatentTensor> {
    shape.validate()?;
    let mut rng = rng_from_seed(seed);
    LatentTensor::new(shape, standard_normal_f32(&mut rng, shape.len()))
}
