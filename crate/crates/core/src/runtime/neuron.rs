//! Sigma-delta neuron blocks: event-driven accumulation and the per-neuron
//! update rule.
//!
//! Each step a neuron recomputes `y = rescale(ReLU(y' + bias))` from its
//! accumulator and compares it with `y_ref`, the value last communicated
//! downstream. A change larger than the threshold is emitted as a graded
//! spike and `y_ref` advances by exactly the emitted payload, so anything
//! cut off by payload saturation is carried into later steps.

use super::spike::{saturate_payload, GradedSpike, SpikeBatch};
use crate::convert::{fits_signed, signed_range, SdnnLayer};
use crate::error::{Result, SdnnError};

/// Per-layer neuron state: accumulators `y'` and reconstruction references `y_ref`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeuronBlockState {
    pub acc: Vec<i32>,
    pub y_ref: Vec<i32>,
    bias: Vec<i64>,
    /// Accumulator updates that hit the register limit and were saturated.
    pub acc_saturations: u64,
    /// Spikes whose payload was clipped to the payload width.
    pub payload_saturations: u64,
}

/// Counters from one [`neuron_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NeuronStepStats {
    pub spikes: u64,
    pub payload_saturations: u64,
    pub clamped: u64,
    /// Largest `|y - y_ref|` left after the step.
    pub max_gap: u32,
}

impl NeuronBlockState {
    pub fn new(layer: &SdnnLayer) -> Self {
        let n = layer.output_dims.len();
        Self {
            acc: vec![0; n],
            y_ref: vec![0; n],
            bias: layer.neuron_biases(),
            acc_saturations: 0,
            payload_saturations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.acc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc.is_empty()
    }

    pub fn neuron_bias(&self, neuron: usize) -> i64 {
        self.bias[neuron]
    }
}

/// Scatters each input spike through the convolution fan-out into the
/// output accumulators. Returns the number of weight applications (synops).
///
/// Accumulators are saturated at the layer's accumulator width; every
/// saturation is counted on the state.
pub fn scatter_conv(
    batch: &SpikeBatch,
    layer: &SdnnLayer,
    state: &mut NeuronBlockState,
) -> Result<u64> {
    let g = &layer.geometry;
    let ind = layer.input_dims;
    let outd = layer.output_dims;
    let plane_out = outd.height * outd.width;
    let w_stride_o = g.fan_in();
    let (lo, hi) = signed_range(layer.bits.acc);
    let mut synops = 0u64;

    // Valid (output coordinate, kernel tap) pairs along one axis.
    let taps = |i: usize, k: usize, n_out: usize| {
        (0..k).filter_map(move |kk| {
            let t = (i + g.padding) as isize - kk as isize;
            if t < 0 || !(t as usize).is_multiple_of(g.stride) {
                return None;
            }
            let o = t as usize / g.stride;
            (o < n_out).then_some((o, kk))
        })
    };

    for spike in &batch.spikes {
        let n = spike.neuron as usize;
        if n >= ind.len() {
            return Err(SdnnError::InvalidArgument(format!(
                "spike coordinate {n} outside input of {} neurons",
                ind.len()
            )));
        }
        let (c, iy, ix) = ind.coords(n);
        let p = spike.payload as i64;
        for (oy, ky) in taps(iy, g.kernel_h, outd.height) {
            for (ox, kx) in taps(ix, g.kernel_w, outd.width) {
                let w_base = g.weight_index(0, c, ky, kx);
                let a_base = oy * outd.width + ox;
                for o in 0..outd.channels {
                    let w = layer.weights[w_base + o * w_stride_o] as i64;
                    let slot = &mut state.acc[o * plane_out + a_base];
                    let v = *slot as i64 + p * w;
                    if fits_signed(v, layer.bits.acc) {
                        *slot = v as i32;
                    } else {
                        *slot = v.clamp(lo, hi) as i32;
                        state.acc_saturations += 1;
                    }
                }
                synops += outd.channels as u64;
            }
        }
    }
    Ok(synops)
}

/// Runs the neuron update on every neuron of the block and collects the
/// emitted spikes.
pub fn neuron_step(
    state: &mut NeuronBlockState,
    layer: &SdnnLayer,
    layer_index: usize,
    timestep: u64,
) -> Result<(SpikeBatch, NeuronStepStats)> {
    let mut batch = SpikeBatch::new(timestep, layer_index as i32);
    let mut stats = NeuronStepStats::default();
    let v_th = layer.v_th as i64;
    for n in 0..state.acc.len() {
        let r = layer.rescale(state.acc[n] as i64 + state.bias[n], layer_index)?;
        stats.clamped += r.clamped as u64;
        let y = r.value as i64;
        let delta = y - state.y_ref[n] as i64;
        if delta.abs() > v_th {
            let p = saturate_payload(delta, layer.bits.spike_payload);
            if p as i64 != delta {
                stats.payload_saturations += 1;
            }
            state.y_ref[n] += p;
            batch.spikes.push(GradedSpike {
                neuron: n as u32,
                payload: p,
            });
        }
        let gap = (y - state.y_ref[n] as i64).unsigned_abs() as u32;
        stats.max_gap = stats.max_gap.max(gap);
    }
    debug_assert!(stats.payload_saturations > 0 || stats.max_gap <= layer.v_th);
    stats.spikes = batch.len() as u64;
    state.payload_saturations += stats.payload_saturations;
    Ok((batch, stats))
}
