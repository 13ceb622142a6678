//! Frame delta encoder: turns a video into graded spikes.

use super::spike::{saturate_payload, GradedSpike, SpikeBatch, ENCODER_ORIGIN};
use crate::convert::EncoderSpec;
use crate::error::{Result, SdnnError};
use crate::quant::QuantTensor;
use crate::tensor::Dims3;

/// Stateless delta: one spike per pixel where `frame - prev != 0`.
/// A missing `prev` is the all-zero integer frame.
pub fn delta_encode(frame: &QuantTensor, prev: Option<&QuantTensor>) -> Result<SpikeBatch> {
    if let Some(p) = prev {
        if p.shape() != frame.shape() {
            return Err(SdnnError::ShapeMismatch {
                expected: frame.shape().to_vec(),
                actual: p.shape().to_vec(),
            });
        }
    }
    let mut batch = SpikeBatch::new(0, ENCODER_ORIGIN);
    for (i, &v) in frame.data().iter().enumerate() {
        let before = prev.map_or(0, |p| p.data()[i]);
        let d = v - before;
        if d != 0 {
            batch.spikes.push(GradedSpike {
                neuron: i as u32,
                payload: d,
            });
        }
    }
    Ok(batch)
}

/// Stateful encoder with a threshold. Tracks, per pixel, the value already
/// communicated downstream and only emits when the change exceeds `v_th`.
#[derive(Clone, Debug)]
pub struct DeltaEncoder {
    dims: Dims3,
    sent: Vec<i32>,
    spec: EncoderSpec,
}

impl DeltaEncoder {
    pub fn new(dims: Dims3, spec: EncoderSpec) -> Self {
        Self {
            dims,
            sent: vec![0; dims.len()],
            spec,
        }
    }

    pub fn encode(&mut self, frame: &[i32], timestep: u64) -> Result<SpikeBatch> {
        if frame.len() != self.dims.len() {
            return Err(SdnnError::ShapeMismatch {
                expected: self.dims.to_vec(),
                actual: vec![frame.len()],
            });
        }
        let mut batch = SpikeBatch::new(timestep, ENCODER_ORIGIN);
        let v_th = self.spec.v_th as i64;
        for (i, (&v, sent)) in frame.iter().zip(self.sent.iter_mut()).enumerate() {
            let d = v as i64 - *sent as i64;
            if d.abs() > v_th {
                let p = saturate_payload(d, self.spec.payload_bits);
                *sent += p;
                batch.spikes.push(GradedSpike {
                    neuron: i as u32,
                    payload: p,
                });
            }
        }
        Ok(batch)
    }

    /// Values currently reconstructed by the first layer.
    pub fn sent(&self) -> &[i32] {
        &self.sent
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{DType, QuantParams};

    fn px(v: i32) -> QuantTensor {
        QuantTensor::new(
            vec![1, 1, 1],
            vec![v],
            QuantParams::new(1.0 / 255.0, 0, DType::U8).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn telescoping_single_pixel() {
        let frames: Vec<_> = [5, 7, 7, 3].into_iter().map(px).collect();
        let mut payloads = Vec::new();
        for (t, f) in frames.iter().enumerate() {
            let prev = t.checked_sub(1).map(|p| &frames[p]);
            let b = delta_encode(f, prev).unwrap();
            payloads.push(b.spikes.first().map(|s| s.payload));
        }
        assert_eq!(payloads, vec![Some(5), Some(2), None, Some(-4)]);

        let mut enc = DeltaEncoder::new(Dims3::new(1, 1, 1), EncoderSpec::default());
        let stateful: Vec<_> = [5, 7, 7, 3]
            .into_iter()
            .enumerate()
            .map(|(t, v)| {
                enc.encode(&[v], t as u64)
                    .unwrap()
                    .spikes
                    .first()
                    .map(|s| s.payload)
            })
            .collect();
        assert_eq!(stateful, payloads);
    }

    #[test]
    fn threshold_holds_back_small_changes() {
        let spec = EncoderSpec {
            v_th: 1,
            payload_bits: 16,
        };
        let mut enc = DeltaEncoder::new(Dims3::new(1, 1, 1), spec);
        assert_eq!(enc.encode(&[1], 0).unwrap().len(), 0);
        assert_eq!(enc.encode(&[2], 1).unwrap().spikes[0].payload, 2);
        assert_eq!(enc.encode(&[3], 2).unwrap().len(), 0);
        assert_eq!(enc.sent(), &[2]);
    }

    #[test]
    fn payload_saturation_carries_residual() {
        let spec = EncoderSpec {
            v_th: 0,
            payload_bits: 4,
        };
        let mut enc = DeltaEncoder::new(Dims3::new(1, 1, 1), spec);
        let mut got = Vec::new();
        for t in 0..4 {
            got.push(
                enc.encode(&[20], t)
                    .unwrap()
                    .spikes
                    .first()
                    .map(|s| s.payload),
            );
        }
        assert_eq!(got, vec![Some(7), Some(7), Some(6), None]);
    }

    #[test]
    fn identical_frames_are_silent() {
        let b = delta_encode(&px(9), Some(&px(9))).unwrap();
        assert!(b.is_empty());
    }
}
