//! Dense real-valued tensors and the channel-major geometry shared by every layer.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdnnError};

/// Channels x height x width of an activation map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims3 {
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

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn from_slice(dims: &[usize]) -> Result<Self> {
        match *dims {
            [c, h, w] => Ok(Self::new(c, h, w)),
            _ => Err(SdnnError::InvalidArgument(format!(
                "expected rank-3 dims, got {dims:?}"
            ))),
        }
    }

    /// Flat index of `(c, y, x)` in channel-major layout.
    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    /// Inverse of [`Dims3::index`].
    #[inline]
    pub fn coords(&self, flat: usize) -> (usize, usize, usize) {
        let plane = self.height * self.width;
        (flat / plane, (flat % plane) / self.width, flat % self.width)
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Real-valued tensor with arbitrary rank, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorF32 {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF32 {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(SdnnError::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SdnnError::NonFinite { index, value });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims3(&self) -> Result<Dims3> {
        Dims3::from_slice(&self.shape)
    }

    pub fn min_max(&self) -> Option<(f32, f32)> {
        self.data.iter().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Mean absolute elementwise difference.
    pub fn mean_abs_diff(&self, other: &TensorF32) -> Result<f64> {
        if self.shape != other.shape {
            return Err(SdnnError::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(total / self.data.len() as f64)
    }
}
