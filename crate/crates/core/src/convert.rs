//! Conversion of a quantized [`ModelIR`] into a sigma-delta graph that runs
//! on integer arithmetic only.
//!
//! Each layer's real rescale `R = s_x * s_w / s_y` becomes a 24-bit integer
//! multiplier followed by an arithmetic right shift. The float bias and the
//! input zero point are folded into one integer bias living in the
//! accumulator domain, where integer 0 is real 0 and the ReLU is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdnnError};
use crate::model::{Activation, ConvGeometry, ModelIR};
use crate::quant::{round_half_even, DType, QuantParams, QuantTensor};
use crate::tensor::Dims3;

/// Width of the fixed-point multiplier.
pub const SCALE_BITS: u32 = 24;
/// Largest shift the requantizer may use.
pub const MAX_SCALE_EXP: u32 = 48;
const SCALE_MAX: u64 = (1 << SCALE_BITS) - 1;

/// Register widths of one converted layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitwidths {
    /// Signed width of the dendritic accumulator `y'`.
    pub acc: u32,
    /// Width of rescaled activations (signedness comes from the output dtype).
    pub out: u32,
    /// Signed width of graded spike payloads.
    pub spike_payload: u32,
    /// Signed width of the `(y * scale)` product register.
    pub product: u32,
}

impl Default for Bitwidths {
    fn default() -> Self {
        Self {
            acc: 24,
            out: 8,
            spike_payload: 16,
            product: 64,
        }
    }
}

impl Bitwidths {
    pub fn validate(&self) -> Result<()> {
        let ok = (2..=32).contains(&self.acc)
            && self.out == 8
            && (2..=16).contains(&self.spike_payload)
            && (SCALE_BITS + 1..=64).contains(&self.product);
        if ok {
            Ok(())
        } else {
            Err(SdnnError::InvalidArgument(format!(
                "unsupported bitwidths {self:?}"
            )))
        }
    }
}

/// Inclusive signed range of a `bits`-wide two's-complement register.
#[inline]
pub fn signed_range(bits: u32) -> (i64, i64) {
    let half = 1i64 << (bits - 1);
    (-half, half - 1)
}

#[inline]
pub fn fits_signed(v: i64, bits: u32) -> bool {
    if bits >= 64 {
        return true;
    }
    let (lo, hi) = signed_range(bits);
    (lo..=hi).contains(&v)
}

/// Fixed-point approximation `scale / 2^scale_exp` of a positive real ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Requantizer {
    pub scale: u32,
    pub scale_exp: u32,
    /// The ratio being approximated; diagnostics only.
    pub real_ratio: f64,
    /// Add `2^(scale_exp-1)` before shifting (round-to-nearest). Off by default.
    #[serde(default)]
    pub round_shift: bool,
}

impl Requantizer {
    /// Picks the largest shift (at most 48) whose rounded multiplier still
    /// fits 24 bits, which normalizes `scale` into `[2^23, 2^24)` whenever the
    /// shift cap allows.
    pub fn derive(ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0 && ratio < (1u64 << SCALE_BITS) as f64) {
            return Err(SdnnError::UnrepresentableRatio(ratio));
        }
        // round(R * 2^e) is monotone in e; scan down from the cap.
        for exp in (0..=MAX_SCALE_EXP).rev() {
            let scaled = round_half_even(ratio * (exp as f64).exp2());
            if scaled <= SCALE_MAX as f64 {
                if scaled < 1.0 {
                    return Err(SdnnError::UnrepresentableRatio(ratio));
                }
                return Ok(Self {
                    scale: scaled as u32,
                    scale_exp: exp,
                    real_ratio: ratio,
                    round_shift: false,
                });
            }
        }
        Err(SdnnError::UnrepresentableRatio(ratio))
    }

    pub fn approx_ratio(&self) -> f64 {
        self.scale as f64 / (self.scale_exp as f64).exp2()
    }

    pub fn relative_error(&self) -> f64 {
        ((self.approx_ratio() - self.real_ratio) / self.real_ratio).abs()
    }

    /// `(v * scale) >> scale_exp` with the product checked against a
    /// `product_bits`-wide register. Returns `None` on overflow.
    #[inline]
    pub fn apply(&self, v: i64, product_bits: u32) -> Option<i64> {
        let prod = v.checked_mul(self.scale as i64)?;
        if !fits_signed(prod, product_bits) {
            return None;
        }
        let prod = if self.round_shift && self.scale_exp > 0 {
            prod.checked_add(1i64 << (self.scale_exp - 1))?
        } else {
            prod
        };
        // `>>` on i64 is arithmetic: floor toward negative infinity.
        Some(prod >> self.scale_exp)
    }
}

/// `round(b / (s_x * s_w)) - z_x * sum(w)` per output channel.
///
/// The zero-point term assumes every kernel tap lands inside the input;
/// taps in the padding border are compensated per neuron by
/// [`SdnnLayer::neuron_biases`].
pub fn fold_bias_and_zero_point(
    bias_f32: &[f32],
    acc_scale: f64,
    input_zero_point: i32,
    weight_sums: &[i64],
    acc_bits: u32,
) -> Result<Vec<i32>> {
    bias_f32
        .iter()
        .zip(weight_sums)
        .enumerate()
        .map(|(o, (&b, &wsum))| {
            let q = round_half_even(b as f64 / acc_scale);
            let (lo, hi) = signed_range(acc_bits);
            if !(q >= lo as f64 && q <= hi as f64) {
                return Err(SdnnError::BiasOutOfRange {
                    channel: o,
                    value: q.clamp(i64::MIN as f64, i64::MAX as f64) as i64,
                    bits: acc_bits,
                });
            }
            let folded = q as i64 - input_zero_point as i64 * wsum;
            if !fits_signed(folded, acc_bits) {
                return Err(SdnnError::BiasOutOfRange {
                    channel: o,
                    value: folded,
                    bits: acc_bits,
                });
            }
            Ok(folded as i32)
        })
        .collect()
}

/// One converted layer: integer weights, folded bias, requantizer, threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdnnLayer {
    pub geometry: ConvGeometry,
    pub input_dims: Dims3,
    pub output_dims: Dims3,
    /// Signed-8 weights, `out_c x in_c x kh x kw`.
    #[serde(skip)]
    pub weights: Vec<i8>,
    #[serde(skip)]
    pub bias_int: Vec<i32>,
    pub input_zero_point: i32,
    pub output_zero_point: i32,
    pub output_dtype: DType,
    /// Real value of one output step; integer execution never reads it.
    pub output_scale: f64,
    pub activation: Activation,
    pub requant: Requantizer,
    pub v_th: u32,
    pub bits: Bitwidths,
}

/// Result of pushing one pre-activation through the rescale path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rescaled {
    pub value: i32,
    /// The output clamp was hit.
    pub clamped: bool,
}

impl SdnnLayer {
    /// Bias per output neuron: the per-channel folded bias plus
    /// `z_x * sum(w)` over the taps that fall into the padding border,
    /// since padded inputs never produce spikes.
    pub fn neuron_biases(&self) -> Vec<i64> {
        let g = &self.geometry;
        let (ind, outd) = (self.input_dims, self.output_dims);
        let z = self.input_zero_point as i64;
        let mut out = Vec::with_capacity(outd.len());
        for o in 0..outd.channels {
            for oy in 0..outd.height {
                for ox in 0..outd.width {
                    let mut b = self.bias_int[o] as i64;
                    if z != 0 {
                        for ky in 0..g.kernel_h {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let row_out = iy < 0 || iy >= ind.height as isize;
                            for kx in 0..g.kernel_w {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if row_out || ix < 0 || ix >= ind.width as isize {
                                    for c in 0..g.in_channels {
                                        b += z * self.weights[g.weight_index(o, c, ky, kx)] as i64;
                                    }
                                }
                            }
                        }
                    }
                    out.push(b);
                }
            }
        }
        out
    }

    /// ReLU (when enabled), multiply-shift, add the output zero point, clamp.
    pub fn rescale(&self, pre_activation: i64, layer: usize) -> Result<Rescaled> {
        let v = match self.activation {
            Activation::Relu => pre_activation.max(0),
            Activation::None => pre_activation,
        };
        let shifted =
            self.requant
                .apply(v, self.bits.product)
                .ok_or(SdnnError::ProductOverflow {
                    layer,
                    value: v,
                    scale: self.requant.scale,
                    bits: self.bits.product,
                })?;
        let y = shifted + self.output_zero_point as i64;
        let value = self.output_dtype.clamp(y);
        Ok(Rescaled {
            value,
            clamped: value as i64 != y,
        })
    }

    pub fn output_qparams(&self) -> QuantParams {
        QuantParams {
            scale: self.output_scale,
            zero_point: self.output_zero_point,
            dtype: self.output_dtype,
        }
    }
}

/// Threshold and payload width of the frame delta encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub v_th: u32,
    pub payload_bits: u32,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            v_th: 0,
            payload_bits: 16,
        }
    }
}

/// A converted network: delta encoder, layer chain, output dequantization.
#[derive(Clone, Debug, PartialEq)]
pub struct SdnnGraph {
    pub version: u32,
    pub input_dims: Dims3,
    pub input_qparams: QuantParams,
    pub encoder: EncoderSpec,
    pub layers: Vec<SdnnLayer>,
    pub output_qparams: QuantParams,
}

impl SdnnGraph {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dims(&self) -> Dims3 {
        self.layers[self.layers.len() - 1].output_dims
    }

    /// Re-expresses raw frames in the graph's input quantization.
    pub fn quantize_inputs(&self, frames: &[QuantTensor]) -> Result<Vec<QuantTensor>> {
        frames
            .iter()
            .map(|f| {
                if f.shape() != self.input_dims.to_vec() {
                    return Err(SdnnError::ShapeMismatch {
                        expected: self.input_dims.to_vec(),
                        actual: f.shape().to_vec(),
                    });
                }
                crate::quant::requantize(f, self.input_qparams)
            })
            .collect()
    }

    pub fn thresholds(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.v_th).collect()
    }

    pub fn all_thresholds_zero(&self) -> bool {
        self.encoder.v_th == 0 && self.layers.iter().all(|l| l.v_th == 0)
    }

    /// Sets thresholds to 1 on the encoder plus the first `n - 1` layers,
    /// and 0 everywhere else. `n == 0` zeroes everything.
    pub fn apply_first_n_thresholds(&mut self, n: usize) -> Result<()> {
        if n > self.layers.len() {
            return Err(SdnnError::InvalidArgument(format!(
                "threshold depth {n} exceeds layer count {}",
                self.layers.len()
            )));
        }
        self.encoder.v_th = u32::from(n >= 1);
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.v_th = u32::from(k + 1 < n);
        }
        Ok(())
    }

    pub fn mac_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.geometry.mac_count(l.input_dims).expect("converted chain"))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SdnnError::InvalidModel(msg));
        if self.layers.is_empty() {
            return bad("graph has no layers".into());
        }
        if !(2..=16).contains(&self.encoder.payload_bits) {
            return bad(format!(
                "encoder payload width {} unsupported",
                self.encoder.payload_bits
            ));
        }
        let mut dims = self.input_dims;
        for (k, l) in self.layers.iter().enumerate() {
            l.geometry.validate()?;
            l.bits.validate()?;
            if l.input_dims != dims {
                return bad(format!(
                    "layer {k}: input dims {} != {}",
                    l.input_dims, dims
                ));
            }
            let out = l.geometry.output_dims(dims)?;
            if l.output_dims != out {
                return bad(format!(
                    "layer {k}: output dims {} != {}",
                    l.output_dims, out
                ));
            }
            if l.weights.len() != l.geometry.weight_len() {
                return bad(format!("layer {k}: weight count mismatch"));
            }
            if l.bias_int.len() != l.geometry.out_channels {
                return bad(format!("layer {k}: bias count mismatch"));
            }
            if let Some(b) = l
                .bias_int
                .iter()
                .find(|b| !fits_signed(**b as i64, l.bits.acc))
            {
                return bad(format!("layer {k}: bias {b} exceeds accumulator"));
            }
            if l.requant.scale as u64 > SCALE_MAX || l.requant.scale_exp > MAX_SCALE_EXP {
                return bad(format!("layer {k}: requantizer out of range"));
            }
            dims = out;
        }
        Ok(())
    }
}

/// Converts a quantized model. `thresholds` holds one value per layer;
/// the encoder threshold starts at 0 (see [`SdnnGraph::apply_first_n_thresholds`]).
pub fn convert(m: &ModelIR, thresholds: &[u32]) -> Result<SdnnGraph> {
    convert_with_bits(m, thresholds, Bitwidths::default())
}

pub fn convert_with_bits(m: &ModelIR, thresholds: &[u32], bits: Bitwidths) -> Result<SdnnGraph> {
    m.validate()?;
    bits.validate()?;
    if thresholds.len() != m.layers.len() {
        return Err(SdnnError::InvalidArgument(format!(
            "expected {} thresholds, got {}",
            m.layers.len(),
            thresholds.len()
        )));
    }
    let dims = m.layer_dims();
    let mut input_dims = m.input_dims;
    let mut layers = Vec::with_capacity(m.layers.len());
    for (k, (spec, &v_th)) in m.layers.iter().zip(thresholds).enumerate() {
        let ratio = spec.acc_scale() / spec.out_qparams.scale;
        let requant = Requantizer::derive(ratio)?;
        let bias_int = fold_bias_and_zero_point(
            &spec.bias_f32,
            spec.acc_scale(),
            spec.in_qparams.zero_point,
            &spec.weight_sums(),
            bits.acc,
        )?;
        log::debug!(
            "layer {k}: R={ratio:e} -> {}/2^{} (rel err {:e})",
            requant.scale,
            requant.scale_exp,
            requant.relative_error()
        );
        layers.push(SdnnLayer {
            geometry: spec.geometry,
            input_dims,
            output_dims: dims[k],
            weights: spec.weights.data().iter().map(|&w| w as i8).collect(),
            bias_int,
            input_zero_point: spec.in_qparams.zero_point,
            output_zero_point: spec.out_qparams.zero_point,
            output_dtype: spec.out_qparams.dtype,
            output_scale: spec.out_qparams.scale,
            activation: spec.activation,
            requant,
            v_th,
            bits,
        });
        input_dims = dims[k];
    }
    let g = SdnnGraph {
        version: m.version,
        input_dims: m.input_dims,
        input_qparams: m.input_qparams(),
        encoder: EncoderSpec {
            v_th: 0,
            payload_bits: bits.spike_payload,
        },
        layers,
        output_qparams: m.output_qparams(),
    };
    g.validate()?;
    Ok(g)
}
