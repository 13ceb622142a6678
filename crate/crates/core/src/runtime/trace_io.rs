//! `.sst` spike trace files.
//!
//! A flat little-endian record stream. For every timestep and every origin
//! (`-1` for the encoder, then each layer in order):
//!
//! ```text
//! timestep: u32, layer: i32, count: u32, count x (coord: u32, payload: i16)
//! ```
//!
//! Layers that were idle on a step still get a record, with `count = 0`.

use std::io::{Read, Write};

use super::spike::{GradedSpike, SpikeBatch, ENCODER_ORIGIN};
use crate::error::{Result, SdnnError};

/// Writes one record per `(timestep, origin)` for `timesteps` steps of a
/// `depth`-layer graph. `batches` must be in emission order.
pub fn write_sst<W: Write>(
    mut w: W,
    batches: &[SpikeBatch],
    depth: usize,
    timesteps: u64,
) -> Result<()> {
    let mut it = batches.iter().peekable();
    let empty = Vec::new();
    for t in 0..timesteps {
        for origin in ENCODER_ORIGIN..depth as i32 {
            let spikes = match it.peek() {
                Some(b) if b.timestep == t && b.origin == origin => &it.next().unwrap().spikes,
                _ => &empty,
            };
            let t32 =
                u32::try_from(t).map_err(|_| SdnnError::Format("timestep exceeds u32".into()))?;
            w.write_all(&t32.to_le_bytes())?;
            w.write_all(&origin.to_le_bytes())?;
            w.write_all(&(spikes.len() as u32).to_le_bytes())?;
            for s in spikes {
                let p = i16::try_from(s.payload).map_err(|_| {
                    SdnnError::Format(format!("payload {} exceeds 16 bits", s.payload))
                })?;
                w.write_all(&s.neuron.to_le_bytes())?;
                w.write_all(&p.to_le_bytes())?;
            }
        }
    }
    if it.next().is_some() {
        return Err(SdnnError::InvalidArgument(
            "batches out of order or beyond the trace length".into(),
        ));
    }
    w.flush()?;
    Ok(())
}

/// Reads every record back, empty ones included.
pub fn read_sst<R: Read>(mut r: R) -> Result<Vec<SpikeBatch>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut rest: &[u8] = &bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if rest.len() < n {
            return Err(SdnnError::Format("truncated spike trace".into()));
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    let mut out = Vec::new();
    let mut remaining = bytes.len();
    while remaining > 0 {
        let t = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let origin = i32::from_le_bytes(take(4)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let mut batch = SpikeBatch::new(t as u64, origin);
        for _ in 0..count {
            let neuron = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let payload = i16::from_le_bytes(take(2)?.try_into().unwrap()) as i32;
            batch.spikes.push(GradedSpike { neuron, payload });
        }
        remaining -= 12 + 6 * count as usize;
        out.push(batch);
    }
    Ok(out)
}
