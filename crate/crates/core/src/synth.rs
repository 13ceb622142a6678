//! Deterministic synthetic models and videos.
//!
//! Videos are mostly static scenes (a fixed random background with a small
//! bright square drifting across it) so that frame-to-frame deltas are
//! sparse, plus a fully random variant where nearly every pixel changes.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SdnnError};
use crate::format::pixel_qparams;
use crate::model::{quantize_model, Activation, ConvGeometry, FloatConvLayer, FloatModel, ModelIR};
use crate::quant::{dequantize_tensor, QuantTensor};
use crate::tensor::{Dims3, TensorF32};

/// Output channels, kernel, stride and padding of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Layer shapes of a synthetic model, e.g. `3x16x16:8k3s2p1,16k3s1p1,27k1s1p0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input: Dims3,
    pub layers: Vec<LayerShape>,
}

impl FromStr for ModelSpec {
    type Err = SdnnError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SdnnError::InvalidArgument(format!("bad model spec {s:?}"));
        let (input, layers) = s.split_once(':').ok_or_else(bad)?;
        let dims: Vec<usize> = input
            .split('x')
            .map(|d| d.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let input = Dims3::from_slice(&dims).map_err(|_| bad())?;
        let layers = layers
            .split(',')
            .map(|l| parse_layer(l.trim()).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(bad());
        }
        Ok(Self { input, layers })
    }
}

fn parse_layer(s: &str) -> Option<LayerShape> {
    let (c, rest) = s.split_once('k')?;
    let (k, rest) = rest.split_once('s')?;
    let (st, p) = rest.split_once('p')?;
    Some(LayerShape {
        out_channels: c.parse().ok()?,
        kernel: k.parse().ok()?,
        stride: st.parse().ok()?,
        padding: p.parse().ok()?,
    })
}

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:", self.input)?;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(
                f,
                "{}k{}s{}p{}",
                l.out_channels, l.kernel, l.stride, l.padding
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VideoKind {
    /// Static background with a bright `blob_size` square moving
    /// `motion_rate` pixels per frame, bouncing off the borders.
    MovingBlob { blob_size: usize, motion_rate: f64 },
    /// Independent uniform noise every frame.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoSpec {
    pub frames: usize,
    pub kind: VideoKind,
}

/// A generated model together with its calibration/test video.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub float_model: FloatModel,
    pub model: ModelIR,
    /// Raw pixel frames (see [`pixel_qparams`]).
    pub frames: Vec<QuantTensor>,
}

/// Random float model with He-uniform weights and small biases.
pub fn random_float_model(spec: &ModelSpec, seed: u64) -> Result<FloatModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_channels = spec.input.channels;
    let last = spec.layers.len() - 1;
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let geometry = ConvGeometry {
                in_channels,
                out_channels: l.out_channels,
                kernel_h: l.kernel,
                kernel_w: l.kernel,
                stride: l.stride,
                padding: l.padding,
            };
            in_channels = l.out_channels;
            let limit = (6.0 / geometry.fan_in() as f32).sqrt();
            let weights = (0..geometry.weight_len())
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let bias = (0..l.out_channels)
                .map(|_| rng.random_range(-0.05f32..0.05))
                .collect();
            Ok(FloatConvLayer {
                geometry,
                weights: TensorF32::new(geometry.weight_shape(), weights)?,
                bias,
                activation: if k == last {
                    Activation::None
                } else {
                    Activation::Relu
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = FloatModel {
        input_dims: spec.input,
        layers,
    };
    m.validate()?;
    Ok(m)
}

/// Triangle wave over `[0, span]`.
fn bounce(pos: f64, span: usize) -> usize {
    if span == 0 {
        return 0;
    }
    let period = 2 * span;
    let p = (pos.floor() as i64).rem_euclid(period as i64) as usize;
    if p <= span {
        p
    } else {
        period - p
    }
}

pub fn generate_video(dims: Dims3, spec: &VideoSpec, seed: u64) -> Vec<QuantTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qp = pixel_qparams();
    let frame =
        |data: Vec<i32>| QuantTensor::new(dims.to_vec(), data, qp).expect("pixels in range");
    match spec.kind {
        VideoKind::Random => (0..spec.frames)
            .map(|_| frame((0..dims.len()).map(|_| rng.random_range(0..=255)).collect()))
            .collect(),
        VideoKind::MovingBlob {
            blob_size,
            motion_rate,
        } => {
            let size = blob_size.clamp(1, dims.height.min(dims.width));
            let background: Vec<i32> = (0..dims.len()).map(|_| rng.random_range(16..=96)).collect();
            let color: Vec<i32> = (0..dims.channels)
                .map(|_| rng.random_range(200..=255))
                .collect();
            let (span_y, span_x) = (dims.height - size, dims.width - size);
            let y0 = rng.random_range(0.0..=span_y as f64);
            let x0 = rng.random_range(0.0..=span_x as f64);
            let (dy, dx) = if rng.random_bool(0.5) {
                (1.0, 1.0)
            } else {
                (1.0, -1.0)
            };
            (0..spec.frames)
                .map(|t| {
                    let travelled = t as f64 * motion_rate;
                    let by = bounce(y0 + dy * travelled, span_y);
                    let bx = bounce(x0 + dx * travelled + span_x as f64 * 2.0, span_x);
                    let mut data = background.clone();
                    for (c, &col) in color.iter().enumerate() {
                        for y in by..by + size {
                            for x in bx..bx + size {
                                data[dims.index(c, y, x)] = col;
                            }
                        }
                    }
                    frame(data)
                })
                .collect()
        }
    }
}

/// Generates a model and a video from one seed, quantizing the model with
/// the video as calibration data.
pub fn gen_synthetic(spec: &ModelSpec, video: &VideoSpec, seed: u64) -> Result<Synthetic> {
    if video.frames == 0 {
        return Err(SdnnError::InvalidArgument(
            "video needs at least one frame".into(),
        ));
    }
    let float_model = random_float_model(spec, seed)?;
    let frames = generate_video(spec.input, video, seed ^ 0x5DEE_CE66_D1CE_B00C);
    let calib: Vec<TensorF32> = frames.iter().map(dequantize_tensor).collect();
    let model = quantize_model(&float_model, &calib)?;
    Ok(Synthetic {
        float_model,
        model,
        frames,
    })
}

/// Bounds for [`random_model_spec`].
#[derive(Clone, Copy, Debug)]
pub struct SpecLimits {
    pub min_layers: usize,
    pub max_layers: usize,
    pub max_hw: usize,
    pub max_channels: usize,
}

impl Default for SpecLimits {
    fn default() -> Self {
        Self {
            min_layers: 2,
            max_layers: 5,
            max_hw: 32,
            max_channels: 16,
        }
    }
}

/// Random valid chain of layers: kernels in {1, 3}, strides in {1, 2},
/// padding 0 or 1 (only with 3x3 kernels).
pub fn random_model_spec<R: Rng>(rng: &mut R, limits: SpecLimits) -> ModelSpec {
    let hw = rng.random_range(4..=limits.max_hw.max(4));
    let hw2 = rng.random_range(4..=limits.max_hw.max(4));
    let input = Dims3::new(rng.random_range(1..=3), hw, hw2);
    let n = rng.random_range(limits.min_layers..=limits.max_layers);
    let (mut h, mut w) = (input.height, input.width);
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let mut kernel = if rng.random_bool(0.7) { 3 } else { 1 };
        let mut padding = if kernel == 3 {
            rng.random_range(0..=1)
        } else {
            0
        };
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            kernel = 1;
            padding = 0;
        }
        let mut stride = if rng.random_bool(0.35) { 2 } else { 1 };
        let out_len = |n: usize, s: usize| (n + 2 * padding - kernel) / s + 1;
        if out_len(h, stride) < 2 || out_len(w, stride) < 2 {
            stride = 1;
        }
        let (oh, ow) = (out_len(h, stride), out_len(w, stride));
        layers.push(LayerShape {
            out_channels: rng.random_range(1..=limits.max_channels),
            kernel,
            stride,
            padding,
        });
        h = oh;
        w = ow;
    }
    ModelSpec { input, layers }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parse_display_roundtrip() {
        let s = "3x16x16:8k3s2p1,16k3s1p1,27k1s1p0";
        let spec: ModelSpec = s.parse().unwrap();
        assert_eq!(spec.layers.len(), 3);
        assert_eq!(spec.layers[0].stride, 2);
        assert_eq!(spec.to_string(), s);
        assert!("3x16:8k3s1p1".parse::<ModelSpec>().is_err());
        assert!("3x16x16:8k3".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn zero_motion_is_static() {
        let spec = VideoSpec {
            frames: 6,
            kind: VideoKind::MovingBlob {
                blob_size: 3,
                motion_rate: 0.0,
            },
        };
        let frames = generate_video(Dims3::new(3, 16, 16), &spec, 1);
        assert!(frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn unit_motion_changes_few_pixels() {
        let size = 3;
        let spec = VideoSpec {
            frames: 40,
            kind: VideoKind::MovingBlob {
                blob_size: size,
                motion_rate: 1.0,
            },
        };
        let dims = Dims3::new(1, 16, 16);
        for seed in 0..8 {
            let frames = generate_video(dims, &spec, seed);
            for w in frames.windows(2) {
                let changed = w[0]
                    .data()
                    .iter()
                    .zip(w[1].data())
                    .filter(|(a, b)| a != b)
                    .count();
                assert!(changed <= 2 * size * size, "seed {seed}: {changed}");
                assert!(changed > 0, "blob should move every frame");
            }
        }
    }

    #[test]
    fn random_specs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let spec = random_model_spec(&mut rng, SpecLimits::default());
            let m = random_float_model(&spec, 0).unwrap();
            m.validate().unwrap();
        }
    }
}
