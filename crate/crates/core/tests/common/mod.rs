#![allow(dead_code)]

use sdnn_core::convert::{Bitwidths, Requantizer};
use sdnn_core::{Activation, ConvGeometry, DType, Dims3, SdnnLayer};

/// Brute-force convolution over an explicitly zero-padded copy of the input.
pub fn naive_conv(x: &[i64], dims: Dims3, g: &ConvGeometry, w: &[i64]) -> Vec<i64> {
    let p = g.padding;
    let (ph, pw) = (dims.height + 2 * p, dims.width + 2 * p);
    let mut padded = vec![0i64; dims.channels * ph * pw];
    for c in 0..dims.channels {
        for y in 0..dims.height {
            for xx in 0..dims.width {
                padded[(c * ph + y + p) * pw + xx + p] = x[(c * dims.height + y) * dims.width + xx];
            }
        }
    }
    let oh = (ph - g.kernel_h) / g.stride + 1;
    let ow = (pw - g.kernel_w) / g.stride + 1;
    let mut out = Vec::new();
    for o in 0..g.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0;
                for c in 0..g.in_channels {
                    for ky in 0..g.kernel_h {
                        for kx in 0..g.kernel_w {
                            let wi = ((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx;
                            let xi = (c * ph + oy * g.stride + ky) * pw + ox * g.stride + kx;
                            s += w[wi] * padded[xi];
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

/// A layer with only the fields the event-driven convolution reads filled in.
pub fn bare_layer(g: ConvGeometry, input_dims: Dims3, weights: Vec<i8>) -> SdnnLayer {
    let output_dims = g.output_dims(input_dims).unwrap();
    SdnnLayer {
        geometry: g,
        input_dims,
        output_dims,
        weights,
        bias_int: vec![0; g.out_channels],
        input_zero_point: 0,
        output_zero_point: 0,
        output_dtype: DType::U8,
        output_scale: 1.0,
        activation: Activation::Relu,
        requant: Requantizer::derive(1.0).unwrap(),
        v_th: 0,
        bits: Bitwidths::default(),
    }
}
