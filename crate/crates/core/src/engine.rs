//! Dense integer reference engine.
//!
//! Two rescale paths are provided. [`RescaleMode::FloatScale`] mirrors the
//! training framework: integer accumulate, then a float rescale with the
//! float bias. [`RescaleMode::FixedPoint`] mirrors the neuron microcode:
//! integer bias, ReLU, 24-bit multiply and arithmetic shift. The fixed path
//! is the oracle the event-driven runtime must reproduce bit for bit.

use crate::convert::{self, fits_signed, SdnnGraph, SdnnLayer};
use crate::error::{Result, SdnnError};
use crate::model::{Activation, ConvGeometry, ConvLayerSpec, ModelIR};
use crate::quant::{round_half_even, QuantParams, QuantTensor};
use crate::tensor::Dims3;

pub const DEFAULT_ACC_BITS: u32 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RescaleMode {
    FloatScale,
    FixedPoint,
}

impl std::str::FromStr for RescaleMode {
    type Err = SdnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" | "float_scale" => Ok(Self::FloatScale),
            "fixed" | "fixed_point" => Ok(Self::FixedPoint),
            other => Err(SdnnError::InvalidArgument(format!(
                "unknown rescale mode {other:?}"
            ))),
        }
    }
}

/// Pre-activation accumulators of one layer, range-checked against `bits`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccumulatorTensor {
    pub dims: Dims3,
    pub data: Vec<i32>,
    pub bits: u32,
}

/// Centered integer convolution: `sum((x_q - z_x) * w_q)`, padding with `z_x`
/// so padded taps contribute nothing.
pub fn conv2d_int(
    x: &QuantTensor,
    layer: &ConvLayerSpec,
    acc_bits: u32,
) -> Result<AccumulatorTensor> {
    let in_dims = Dims3::from_slice(x.shape())?;
    let z = x.qparams().zero_point;
    let centered: Vec<i32> = x.data().iter().map(|&v| v - z).collect();
    conv_accumulate(
        &centered,
        in_dims,
        &layer.geometry,
        layer.weights.data(),
        acc_bits,
        0,
    )
}

/// Raw integer convolution on un-centered inputs with zero padding, the
/// quantity a spiking neuron accumulates from deltas.
pub fn conv2d_int_raw(
    x: &[i32],
    layer: &SdnnLayer,
    layer_index: usize,
) -> Result<AccumulatorTensor> {
    let weights: Vec<i32> = layer.weights.iter().map(|&w| w as i32).collect();
    conv_accumulate(
        x,
        layer.input_dims,
        &layer.geometry,
        &weights,
        layer.bits.acc,
        layer_index,
    )
}

fn conv_accumulate(
    x: &[i32],
    in_dims: Dims3,
    g: &ConvGeometry,
    weights: &[i32],
    acc_bits: u32,
    layer_index: usize,
) -> Result<AccumulatorTensor> {
    if x.len() != in_dims.len() {
        return Err(SdnnError::ShapeMismatch {
            expected: in_dims.to_vec(),
            actual: vec![x.len()],
        });
    }
    let out_dims = g.output_dims(in_dims)?;
    let mut data = Vec::with_capacity(out_dims.len());
    for o in 0..out_dims.channels {
        for oy in 0..out_dims.height {
            for ox in 0..out_dims.width {
                let mut acc: i64 = 0;
                for c in 0..g.in_channels {
                    for ky in 0..g.kernel_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= in_dims.height as isize {
                            continue;
                        }
                        let row = in_dims.index(c, iy as usize, 0);
                        for kx in 0..g.kernel_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= in_dims.width as isize {
                                continue;
                            }
                            acc += x[row + ix as usize] as i64
                                * weights[g.weight_index(o, c, ky, kx)] as i64;
                        }
                    }
                }
                if !fits_signed(acc, acc_bits) {
                    return Err(SdnnError::AccumulatorOverflow {
                        layer: layer_index,
                        value: acc,
                        bits: acc_bits,
                    });
                }
                data.push(acc as i32);
            }
        }
    }
    Ok(AccumulatorTensor {
        dims: out_dims,
        data,
        bits: acc_bits,
    })
}

/// Framework-style requantization of a centered accumulator.
pub fn requantize_float(acc: &AccumulatorTensor, layer: &ConvLayerSpec) -> QuantTensor {
    let s_acc = layer.acc_scale();
    let out = layer.out_qparams;
    let plane = acc.dims.height * acc.dims.width;
    let data = acc
        .data
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut real = a as f64 * s_acc + layer.bias_f32[i / plane] as f64;
            if layer.activation == Activation::Relu {
                real = real.max(0.0);
            }
            let q = round_half_even(real / out.scale) + out.zero_point as f64;
            q.clamp(out.dtype.qmin() as f64, out.dtype.qmax() as f64) as i32
        })
        .collect();
    QuantTensor::new(acc.dims.to_vec(), data, out).expect("clamped into dtype")
}

/// Fixed-point requantization of a raw accumulator, integer bias included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedOutput {
    pub values: Vec<i32>,
    /// Elements that hit the output clamp.
    pub saturated: usize,
}

pub fn requantize_fixed(
    acc: &AccumulatorTensor,
    layer: &SdnnLayer,
    layer_index: usize,
) -> Result<FixedOutput> {
    let biases = layer.neuron_biases();
    if biases.len() != acc.data.len() {
        return Err(SdnnError::ShapeMismatch {
            expected: layer.output_dims.to_vec(),
            actual: acc.dims.to_vec(),
        });
    }
    let mut saturated = 0;
    let mut values = Vec::with_capacity(acc.data.len());
    for (&a, &b) in acc.data.iter().zip(&biases) {
        let r = layer.rescale(a as i64 + b, layer_index)?;
        saturated += r.clamped as usize;
        values.push(r.value);
    }
    Ok(FixedOutput { values, saturated })
}

/// Output of a dense reference forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRun {
    /// Quantized activations of every layer; the last is the network output.
    pub activations: Vec<QuantTensor>,
    pub mac_count: u64,
    pub saturated: usize,
}

impl ReferenceRun {
    pub fn output(&self) -> &QuantTensor {
        self.activations.last().expect("at least one layer")
    }
}

/// Dense forward pass of a quantized model. `frame` must already carry the
/// model's input quantization (see [`ModelIR::quantize_input`]).
pub fn run_reference(m: &ModelIR, frame: &QuantTensor, mode: RescaleMode) -> Result<ReferenceRun> {
    check_input(m.input_dims, m.input_qparams(), frame)?;
    match mode {
        RescaleMode::FloatScale => {
            let mut x = frame.clone();
            let mut activations = Vec::with_capacity(m.layers.len());
            for layer in &m.layers {
                let acc = conv2d_int(&x, layer, DEFAULT_ACC_BITS)?;
                x = requantize_float(&acc, layer);
                activations.push(x.clone());
            }
            Ok(ReferenceRun {
                activations,
                mac_count: m.mac_count(),
                saturated: 0,
            })
        }
        RescaleMode::FixedPoint => {
            let zeros = vec![0; m.layers.len()];
            let g = convert::convert(m, &zeros)?;
            run_graph_reference(&g, frame)
        }
    }
}

/// Dense fixed-point forward pass of a converted graph, thresholds ignored.
pub fn run_graph_reference(g: &SdnnGraph, frame: &QuantTensor) -> Result<ReferenceRun> {
    check_input(g.input_dims, g.input_qparams, frame)?;
    let mut x: Vec<i32> = frame.data().to_vec();
    let mut activations = Vec::with_capacity(g.layers.len());
    let mut saturated = 0;
    for (k, layer) in g.layers.iter().enumerate() {
        let acc = conv2d_int_raw(&x, layer, k)?;
        let out = requantize_fixed(&acc, layer, k)?;
        saturated += out.saturated;
        x = out.values;
        activations.push(QuantTensor::new(
            layer.output_dims.to_vec(),
            x.clone(),
            layer.output_qparams(),
        )?);
    }
    Ok(ReferenceRun {
        activations,
        mac_count: g.mac_count(),
        saturated,
    })
}

fn check_input(dims: Dims3, qp: QuantParams, frame: &QuantTensor) -> Result<()> {
    if frame.shape() != dims.to_vec() {
        return Err(SdnnError::ShapeMismatch {
            expected: dims.to_vec(),
            actual: frame.shape().to_vec(),
        });
    }
    if frame.qparams() != qp {
        return Err(SdnnError::InvalidArgument(
            "frame is not quantized with the model's input parameters".into(),
        ));
    }
    Ok(())
}
