//! Float and quantized model representations and post-training quantization.
//!
//! Models are feedforward chains of strided convolutions. There are no
//! pooling, residual or fully-connected layers: downsampling is done by
//! stride and every layer feeds exactly one successor.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdnnError};
use crate::quant::{self, DType, MinMaxObserver, QuantParams, QuantTensor};
use crate::tensor::{Dims3, TensorF32};

/// Current `.sdm`/`.sdg` format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Shape parameters of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SdnnError::InvalidModel(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return bad("kernel and stride must be positive".into());
        }
        if self.padding >= self.kernel_h || self.padding >= self.kernel_w {
            return bad(format!(
                "padding {} must be smaller than kernel {}x{}",
                self.padding, self.kernel_h, self.kernel_w
            ));
        }
        Ok(())
    }

    /// `floor((in + 2*pad - kernel) / stride) + 1` per spatial axis.
    pub fn output_dims(&self, input: Dims3) -> Result<Dims3> {
        if input.channels != self.in_channels {
            return Err(SdnnError::ShapeMismatch {
                expected: vec![self.in_channels],
                actual: vec![input.channels],
            });
        }
        let axis = |n: usize, k: usize| -> Result<usize> {
            let padded = n + 2 * self.padding;
            if padded < k {
                return Err(SdnnError::InvalidModel(format!(
                    "kernel {k} larger than padded input {padded}"
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok(Dims3::new(
            self.out_channels,
            axis(input.height, self.kernel_h)?,
            axis(input.width, self.kernel_w)?,
        ))
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    #[inline]
    pub fn weight_index(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel_h + ky) * self.kernel_w + kx
    }

    /// Dense multiply-accumulates for one frame, padded taps included.
    pub fn mac_count(&self, input: Dims3) -> Result<u64> {
        let out = self.output_dims(input)?;
        Ok((out.height
            * out.width
            * out.channels
            * self.kernel_h
            * self.kernel_w
            * self.in_channels) as u64)
    }
}

/// Float convolution layer prior to quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatConvLayer {
    pub geometry: ConvGeometry,
    /// `out_c x in_c x kh x kw`.
    pub weights: TensorF32,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloatModel {
    pub input_dims: Dims3,
    pub layers: Vec<FloatConvLayer>,
}

impl FloatModel {
    pub fn validate(&self) -> Result<Vec<Dims3>> {
        if self.layers.is_empty() {
            return Err(SdnnError::InvalidModel("model has no layers".into()));
        }
        let mut dims = self.input_dims;
        let mut chain = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            layer.geometry.validate()?;
            if layer.weights.shape() != layer.geometry.weight_shape() {
                return Err(SdnnError::ShapeMismatch {
                    expected: layer.geometry.weight_shape(),
                    actual: layer.weights.shape().to_vec(),
                });
            }
            if layer.bias.len() != layer.geometry.out_channels {
                return Err(SdnnError::InvalidModel(format!(
                    "layer {k}: bias length {} != out channels {}",
                    layer.bias.len(),
                    layer.geometry.out_channels
                )));
            }
            dims = layer.geometry.output_dims(dims)?;
            chain.push(dims);
        }
        Ok(chain)
    }

    /// Float forward pass, returning every layer's activation.
    pub fn forward(&self, frame: &TensorF32) -> Result<Vec<TensorF32>> {
        let mut x = frame.clone();
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = conv2d_f32(
                &x,
                &layer.geometry,
                layer.weights.data(),
                &layer.bias,
                layer.activation,
            )?;
            outs.push(x.clone());
        }
        Ok(outs)
    }
}

/// Reference float convolution (zero padding), accumulating in f64.
pub fn conv2d_f32(
    input: &TensorF32,
    geom: &ConvGeometry,
    weights: &[f32],
    bias: &[f32],
    activation: Activation,
) -> Result<TensorF32> {
    let in_dims = input.dims3()?;
    let out_dims = geom.output_dims(in_dims)?;
    let x = input.data();
    let mut out = vec![0.0f32; out_dims.len()];
    for o in 0..out_dims.channels {
        for oy in 0..out_dims.height {
            for ox in 0..out_dims.width {
                let mut acc = bias[o] as f64;
                for c in 0..geom.in_channels {
                    for ky in 0..geom.kernel_h {
                        let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                        if iy < 0 || iy >= in_dims.height as isize {
                            continue;
                        }
                        for kx in 0..geom.kernel_w {
                            let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                            if ix < 0 || ix >= in_dims.width as isize {
                                continue;
                            }
                            let xv = x[in_dims.index(c, iy as usize, ix as usize)] as f64;
                            acc += xv * weights[geom.weight_index(o, c, ky, kx)] as f64;
                        }
                    }
                }
                if activation == Activation::Relu {
                    acc = acc.max(0.0);
                }
                out[out_dims.index(o, oy, ox)] = acc as f32;
            }
        }
    }
    TensorF32::new(out_dims.to_vec(), out)
}

/// One quantized convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerSpec {
    pub geometry: ConvGeometry,
    /// Signed-8, symmetric (`zero_point == 0`), `out_c x in_c x kh x kw`.
    pub weights: QuantTensor,
    /// Biases stay in float until conversion.
    pub bias_f32: Vec<f32>,
    pub in_qparams: QuantParams,
    pub out_qparams: QuantParams,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn weight_scale(&self) -> f64 {
        self.weights.qparams().scale
    }

    /// `s_x * s_w`, the real value of one accumulator unit.
    pub fn acc_scale(&self) -> f64 {
        self.in_qparams.scale * self.weight_scale()
    }

    /// Sum of integer weights per output channel.
    pub fn weight_sums(&self) -> Vec<i64> {
        let per_out = self.geometry.fan_in();
        self.weights
            .data()
            .chunks(per_out)
            .map(|c| c.iter().map(|&w| w as i64).sum())
            .collect()
    }
}

/// A validated chain of quantized convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelIR {
    pub version: u32,
    pub input_dims: Dims3,
    pub layers: Vec<ConvLayerSpec>,
}

impl ModelIR {
    pub fn new(input_dims: Dims3, layers: Vec<ConvLayerSpec>) -> Result<Self> {
        let m = Self {
            version: MODEL_FORMAT_VERSION,
            input_dims,
            layers,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn input_qparams(&self) -> QuantParams {
        self.layers[0].in_qparams
    }

    pub fn output_qparams(&self) -> QuantParams {
        self.layers[self.layers.len() - 1].out_qparams
    }

    pub fn output_dims(&self) -> Dims3 {
        *self
            .layer_dims()
            .last()
            .expect("validated model has layers")
    }

    /// Output dims of every layer.
    pub fn layer_dims(&self) -> Vec<Dims3> {
        let mut dims = self.input_dims;
        self.layers
            .iter()
            .map(|l| {
                dims = l.geometry.output_dims(dims).expect("validated chain");
                dims
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SdnnError::InvalidModel(msg));
        if self.layers.is_empty() {
            return bad("model has no layers".into());
        }
        let mut dims = self.input_dims;
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            l.geometry.validate()?;
            if l.weights.shape() != l.geometry.weight_shape() {
                return bad(format!(
                    "layer {k}: weights shape {:?} != {:?}",
                    l.weights.shape(),
                    l.geometry.weight_shape()
                ));
            }
            let wq = l.weights.qparams();
            if wq.dtype != DType::I8 || wq.zero_point != 0 {
                return bad(format!("layer {k}: weights must be symmetric signed-8"));
            }
            if l.bias_f32.len() != l.geometry.out_channels {
                return bad(format!("layer {k}: bias length mismatch"));
            }
            if l.bias_f32.iter().any(|b| !b.is_finite()) {
                return bad(format!("layer {k}: non-finite bias"));
            }
            l.in_qparams.validate()?;
            l.out_qparams.validate()?;
            if k < last && l.activation != Activation::Relu {
                return bad(format!("layer {k}: only the final layer may skip relu"));
            }
            if k > 0 && self.layers[k - 1].out_qparams != l.in_qparams {
                return bad(format!(
                    "layer {k}: input qparams do not match previous layer's output"
                ));
            }
            dims = l.geometry.output_dims(dims)?;
        }
        let _ = dims;
        Ok(())
    }

    /// Dense MACs per frame summed over layers.
    pub fn mac_count(&self) -> u64 {
        let mut dims = self.input_dims;
        let mut total = 0;
        for l in &self.layers {
            total += l.geometry.mac_count(dims).expect("validated chain");
            dims = l.geometry.output_dims(dims).expect("validated chain");
        }
        total
    }

    /// Re-expresses a frame in this model's input quantization.
    pub fn quantize_input(&self, frame: &QuantTensor) -> Result<QuantTensor> {
        if frame.shape() != self.input_dims.to_vec() {
            return Err(SdnnError::ShapeMismatch {
                expected: self.input_dims.to_vec(),
                actual: frame.shape().to_vec(),
            });
        }
        quant::requantize(frame, self.input_qparams())
    }
}

/// Post-training static quantization with min-max calibration.
///
/// Weights get per-tensor symmetric signed-8 parameters. Activations are
/// observed over a float forward pass of every calibration frame; hidden
/// layers use unsigned-8, the final no-activation layer uses signed-8.
pub fn quantize_model(float: &FloatModel, calibration: &[TensorF32]) -> Result<ModelIR> {
    if calibration.is_empty() {
        return Err(SdnnError::InvalidArgument(
            "at least one calibration frame is required".into(),
        ));
    }
    float.validate()?;
    let mut input_obs = MinMaxObserver::new();
    let mut layer_obs = vec![MinMaxObserver::new(); float.layers.len()];
    for frame in calibration {
        if frame.shape() != float.input_dims.to_vec() {
            return Err(SdnnError::ShapeMismatch {
                expected: float.input_dims.to_vec(),
                actual: frame.shape().to_vec(),
            });
        }
        input_obs.observe(frame);
        for (obs, act) in layer_obs.iter_mut().zip(float.forward(frame)?) {
            obs.observe(&act);
        }
    }

    let mut in_qp = input_obs.finalize(DType::U8)?;
    let mut layers = Vec::with_capacity(float.layers.len());
    for (fl, obs) in float.layers.iter().zip(&layer_obs) {
        let max_abs = fl
            .weights
            .data()
            .iter()
            .fold(0.0f64, |m, w| m.max((*w as f64).abs()));
        let w_qp = quant::symmetric_i8(max_abs)?;
        let weights = quant::quantize_tensor(&fl.weights, w_qp)?;
        let out_dtype = match fl.activation {
            Activation::Relu => DType::U8,
            Activation::None => DType::I8,
        };
        let out_qp = obs.finalize(out_dtype)?;
        layers.push(ConvLayerSpec {
            geometry: fl.geometry,
            weights,
            bias_f32: fl.bias.clone(),
            in_qparams: in_qp,
            out_qparams: out_qp,
            activation: fl.activation,
        });
        in_qp = out_qp;
    }
    ModelIR::new(float.input_dims, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_float() -> FloatModel {
        FloatModel {
            input_dims: Dims3::new(1, 2, 2),
            layers: vec![FloatConvLayer {
                geometry: ConvGeometry {
                    in_channels: 1,
                    out_channels: 1,
                    kernel_h: 1,
                    kernel_w: 1,
                    stride: 1,
                    padding: 0,
                },
                weights: TensorF32::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
                bias: vec![0.0],
                activation: Activation::Relu,
            }],
        }
    }

    #[test]
    fn identity_weight_quantizes_to_127() {
        let calib = TensorF32::new(vec![1, 2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let m = quantize_model(&identity_float(), &[calib]).unwrap();
        let w = &m.layers[0].weights;
        assert_eq!(w.data(), &[127]);
        assert!((w.qparams().scale - 1.0 / 127.0).abs() < 1e-15);
        assert!((m.input_qparams().scale - 1.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_degenerate_scale() {
        let mut f = identity_float();
        f.layers[0].weights = TensorF32::zeros(vec![1, 1, 1, 1]);
        let calib = TensorF32::new(vec![1, 2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let m = quantize_model(&f, &[calib]).unwrap();
        assert_eq!(m.layers[0].weights.data(), &[0]);
        assert_eq!(m.layers[0].weight_scale(), 1.0);
    }

    #[test]
    fn quantize_requires_calibration() {
        assert!(quantize_model(&identity_float(), &[]).is_err());
    }

    #[test]
    fn quantize_rejects_wrong_frame_dims() {
        let calib = TensorF32::zeros(vec![1, 3, 3]);
        assert!(matches!(
            quantize_model(&identity_float(), &[calib]),
            Err(SdnnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn output_dims_formula() {
        let g = ConvGeometry {
            in_channels: 3,
            out_channels: 16,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!(
            g.output_dims(Dims3::new(3, 448, 448)).unwrap(),
            Dims3::new(16, 224, 224)
        );
        assert_eq!(g.mac_count(Dims3::new(3, 448, 448)).unwrap(), 21_676_032);
        assert_eq!(
            g.output_dims(Dims3::new(3, 7, 8)).unwrap(),
            Dims3::new(16, 4, 4)
        );
    }

    #[test]
    fn geometry_rejects_padding_ge_kernel() {
        let g = ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 1,
        };
        assert!(g.validate().is_err());
    }
}
