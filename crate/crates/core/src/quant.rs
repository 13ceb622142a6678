//! Per-tensor affine quantization: parameters, quantize/dequantize and min-max calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdnnError};
use crate::tensor::TensorF32;

/// 8-bit storage type of a quantized tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    I8,
    U8,
}

impl DType {
    pub const fn qmin(self) -> i32 {
        match self {
            DType::I8 => -128,
            DType::U8 => 0,
        }
    }

    pub const fn qmax(self) -> i32 {
        match self {
            DType::I8 => 127,
            DType::U8 => 255,
        }
    }

    #[inline]
    pub fn clamp(self, v: i64) -> i32 {
        v.clamp(self.qmin() as i64, self.qmax() as i64) as i32
    }

    pub fn contains(self, v: i32) -> bool {
        (self.qmin()..=self.qmax()).contains(&v)
    }
}

/// Rounds to the nearest integer, ties to even.
#[inline]
pub fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

/// Affine mapping `real = scale * (q - zero_point)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub dtype: DType,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32, dtype: DType) -> Result<Self> {
        let qp = Self {
            scale,
            zero_point,
            dtype,
        };
        qp.validate()?;
        Ok(qp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(SdnnError::InvalidQParams(format!(
                "scale must be finite and positive, got {}",
                self.scale
            )));
        }
        if !self.dtype.contains(self.zero_point) {
            return Err(SdnnError::InvalidQParams(format!(
                "zero point {} outside {:?} range",
                self.zero_point, self.dtype
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn quantize_value(&self, x: f64) -> i32 {
        let q = round_half_even(x / self.scale) + self.zero_point as f64;
        // Saturate in float before the cast so huge values cannot wrap.
        let q = q.clamp(self.dtype.qmin() as f64, self.dtype.qmax() as f64);
        q as i32
    }

    #[inline]
    pub fn dequantize_value(&self, q: i32) -> f64 {
        self.scale * (q - self.zero_point) as f64
    }
}

/// Integer tensor plus the affine parameters that give it meaning.
///
/// Values are held widened to `i32` but are always inside `qparams.dtype`'s range.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
    qparams: QuantParams,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>, qparams: QuantParams) -> Result<Self> {
        qparams.validate()?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(SdnnError::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !qparams.dtype.contains(**v)) {
            return Err(SdnnError::InvalidQParams(format!(
                "value {v} outside {:?} range",
                qparams.dtype
            )));
        }
        Ok(Self {
            shape,
            data,
            qparams,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn qparams(&self) -> QuantParams {
        self.qparams
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn quantize_tensor(t: &TensorF32, qp: QuantParams) -> Result<QuantTensor> {
    qp.validate()?;
    if let Some((index, &value)) = t.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(SdnnError::NonFinite { index, value });
    }
    let data = t
        .data()
        .iter()
        .map(|&x| qp.quantize_value(x as f64))
        .collect();
    Ok(QuantTensor {
        shape: t.shape().to_vec(),
        data,
        qparams: qp,
    })
}

pub fn dequantize_tensor(qt: &QuantTensor) -> TensorF32 {
    let qp = qt.qparams;
    let data = qt
        .data
        .iter()
        .map(|&q| qp.dequantize_value(q) as f32)
        .collect();
    TensorF32::new(qt.shape.clone(), data).expect("dequantized values are finite")
}

/// Re-expresses `qt` under `qp` (no-op when the parameters already match).
pub fn requantize(qt: &QuantTensor, qp: QuantParams) -> Result<QuantTensor> {
    if qt.qparams == qp {
        return Ok(qt.clone());
    }
    quantize_tensor(&dequantize_tensor(qt), qp)
}

/// Tracks the running range of observed tensors for calibration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MinMaxObserver {
    range: Option<(f64, f64)>,
}

impl MinMaxObserver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, t: &TensorF32) {
        if let Some((lo, hi)) = t.min_max() {
            self.observe_range(lo as f64, hi as f64);
        }
    }

    pub fn observe_range(&mut self, lo: f64, hi: f64) {
        self.range = Some(match self.range {
            None => (lo, hi),
            Some((a, b)) => (a.min(lo), b.max(hi)),
        });
    }

    pub fn running_min(&self) -> Option<f64> {
        self.range.map(|r| r.0)
    }

    pub fn running_max(&self) -> Option<f64> {
        self.range.map(|r| r.1)
    }

    /// Derives quantization parameters whose range always contains zero.
    ///
    /// `U8` is affine with a free zero point. `I8` is symmetric around zero
    /// with `scale = max|x| / 127`, the same rule used for weights.
    pub fn finalize(&self, dtype: DType) -> Result<QuantParams> {
        let (lo, hi) = self.range.ok_or(SdnnError::EmptyObserver)?;
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        match dtype {
            DType::U8 => {
                let span = (dtype.qmax() - dtype.qmin()) as f64;
                let scale = (hi - lo) / span;
                if scale <= 0.0 || !scale.is_finite() {
                    return QuantParams::new(1.0, 0, dtype);
                }
                let zp = round_half_even(dtype.qmin() as f64 - lo / scale);
                let zp = dtype.clamp(zp as i64);
                QuantParams::new(scale, zp, dtype)
            }
            DType::I8 => symmetric_i8(lo.abs().max(hi.abs())),
        }
    }
}

/// Symmetric signed-8 parameters for a tensor with the given max magnitude.
pub fn symmetric_i8(max_abs: f64) -> Result<QuantParams> {
    if max_abs <= 0.0 || !max_abs.is_finite() {
        return QuantParams::new(1.0, 0, DType::I8);
    }
    QuantParams::new(max_abs / 127.0, 0, DType::I8)
}
