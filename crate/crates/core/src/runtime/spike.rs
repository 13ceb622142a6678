//! Graded spikes and per-timestep spike batches.

use crate::error::{Result, SdnnError};

/// Layer index used for batches emitted by the input delta encoder.
pub const ENCODER_ORIGIN: i32 = -1;

/// One event: a flat `(channel, row, col)` coordinate and a nonzero payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GradedSpike {
    pub neuron: u32,
    pub payload: i32,
}

/// Spikes emitted by one layer in one timestep, sorted by coordinate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpikeBatch {
    pub timestep: u64,
    /// Emitting layer, or [`ENCODER_ORIGIN`].
    pub origin: i32,
    pub spikes: Vec<GradedSpike>,
}

impl SpikeBatch {
    pub fn new(timestep: u64, origin: i32) -> Self {
        Self {
            timestep,
            origin,
            spikes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }

    /// Checks coordinates are strictly increasing, below `limit`, and payloads nonzero.
    pub fn validate(&self, limit: usize) -> Result<()> {
        let mut prev: Option<u32> = None;
        for s in &self.spikes {
            if s.payload == 0 {
                return Err(SdnnError::InvalidArgument(format!(
                    "zero payload at neuron {}",
                    s.neuron
                )));
            }
            if s.neuron as usize >= limit {
                return Err(SdnnError::InvalidArgument(format!(
                    "spike coordinate {} outside layer of {limit} neurons",
                    s.neuron
                )));
            }
            if prev.is_some_and(|p| p >= s.neuron) {
                return Err(SdnnError::InvalidArgument(
                    "spike coordinates not strictly increasing".into(),
                ));
            }
            prev = Some(s.neuron);
        }
        Ok(())
    }

    /// Accumulates payloads into a dense tensor of `len` neurons.
    pub fn densify(&self, len: usize) -> Vec<i32> {
        let mut dense = vec![0; len];
        for s in &self.spikes {
            dense[s.neuron as usize] += s.payload;
        }
        dense
    }
}

/// Symmetric saturation to a `bits`-wide signed payload: `|p| <= 2^(bits-1) - 1`.
#[inline]
pub fn saturate_payload(delta: i64, bits: u32) -> i32 {
    let max = (1i64 << (bits - 1)) - 1;
    delta.clamp(-max, max) as i32
}
