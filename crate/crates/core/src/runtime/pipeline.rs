//! Barrier-synchronized layer pipeline.
//!
//! At timestep `t` the encoder turns frame `t` into a batch for layer 0, and
//! every layer consumes the batch its upstream emitted at `t - 1`. A layer
//! stays idle until its first batch arrives, so the output for frame `f`
//! is complete after timestep `f + L` for an `L`-layer graph.

use rayon::prelude::*;

use super::encoder::DeltaEncoder;
use super::neuron::{neuron_step, scatter_conv, NeuronBlockState, NeuronStepStats};
use super::spike::SpikeBatch;
use crate::convert::{SdnnGraph, SdnnLayer};
use crate::error::{Result, SdnnError};
use crate::quant::QuantTensor;
use crate::tensor::TensorF32;

/// Per-layer counters for one timestep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LayerStepMetrics {
    /// Layer received a batch this step (false while the pipeline fills).
    pub active: bool,
    pub spikes_in: u64,
    pub synops: u64,
    pub spikes_out: u64,
    pub acc_saturations: u64,
    pub payload_saturations: u64,
    pub clamped: u64,
    pub max_gap: u32,
}

/// Counters for one timestep across the whole pipeline.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepMetrics {
    pub timestep: u64,
    pub encoder_spikes: u64,
    pub layers: Vec<LayerStepMetrics>,
}

impl StepMetrics {
    pub fn synops(&self) -> u64 {
        self.layers.iter().map(|l| l.synops).sum()
    }

    /// Spikes emitted by the encoder and every layer.
    pub fn spikes(&self) -> u64 {
        self.encoder_spikes + self.layers.iter().map(|l| l.spikes_out).sum::<u64>()
    }
}

/// Every [`StepMetrics`] of a run, plus the number of input frames.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuntimeTrace {
    pub frames: usize,
    pub steps: Vec<StepMetrics>,
}

impl RuntimeTrace {
    pub fn total_synops(&self) -> u64 {
        self.steps.iter().map(StepMetrics::synops).sum()
    }

    pub fn total_spikes(&self) -> u64 {
        self.steps.iter().map(StepMetrics::spikes).sum()
    }

    pub fn total_saturations(&self) -> u64 {
        self.steps
            .iter()
            .flat_map(|s| &s.layers)
            .map(|l| l.acc_saturations + l.payload_saturations)
            .sum()
    }

    pub fn synops_per_layer(&self) -> Vec<u64> {
        let n = self.steps.first().map_or(0, |s| s.layers.len());
        let mut out = vec![0; n];
        for s in &self.steps {
            for (o, l) in out.iter_mut().zip(&s.layers) {
                *o += l.synops;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Sequential,
    /// Layers of one timestep run concurrently; results are identical.
    LayerParallel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub execution: Execution,
    /// Keep every emitted batch (needed for spike trace export).
    pub record_spikes: bool,
}

/// Mutable state of a running graph.
#[derive(Clone, Debug)]
pub struct PipelineState {
    encoder: DeltaEncoder,
    blocks: Vec<NeuronBlockState>,
    /// `inbox[k]` holds the batch emitted for layer `k` on the previous step.
    inbox: Vec<Option<SpikeBatch>>,
    output_sum: Vec<i32>,
    last_frame: Option<Vec<i32>>,
    timestep: u64,
}

impl PipelineState {
    pub fn new(g: &SdnnGraph) -> Self {
        Self {
            encoder: DeltaEncoder::new(g.input_dims, g.encoder),
            blocks: g.layers.iter().map(NeuronBlockState::new).collect(),
            inbox: vec![None; g.layers.len()],
            output_sum: vec![0; g.output_dims().len()],
            last_frame: None,
            timestep: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    /// Running sum of final-layer payloads, in the output's integer domain.
    pub fn output_sum(&self) -> &[i32] {
        &self.output_sum
    }

    pub fn block(&self, layer: usize) -> &NeuronBlockState {
        &self.blocks[layer]
    }

    pub fn encoder(&self) -> &DeltaEncoder {
        &self.encoder
    }
}

/// Everything one timestep produced.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Final layer's batch, if that layer was active.
    pub output: Option<SpikeBatch>,
    pub metrics: StepMetrics,
    /// Encoder batch followed by each active layer's batch.
    pub emitted: Vec<SpikeBatch>,
}

fn run_layer(
    layer: &SdnnLayer,
    index: usize,
    block: &mut NeuronBlockState,
    inbox: Option<SpikeBatch>,
    timestep: u64,
) -> Result<(Option<SpikeBatch>, LayerStepMetrics)> {
    let Some(batch) = inbox else {
        return Ok((None, LayerStepMetrics::default()));
    };
    let sat_before = block.acc_saturations;
    let synops = scatter_conv(&batch, layer, block)?;
    let (
        out,
        NeuronStepStats {
            spikes,
            payload_saturations,
            clamped,
            max_gap,
        },
    ) = neuron_step(block, layer, index, timestep)?;
    let m = LayerStepMetrics {
        active: true,
        spikes_in: batch.len() as u64,
        synops,
        spikes_out: spikes,
        acc_saturations: block.acc_saturations - sat_before,
        payload_saturations,
        clamped,
        max_gap,
    };
    Ok((Some(out), m))
}

/// Advances the pipeline one timestep. `frame = None` re-presents the last
/// frame, i.e. injects no new change (used to flush the pipeline).
pub fn step_pipeline(
    g: &SdnnGraph,
    ps: &mut PipelineState,
    frame: Option<&QuantTensor>,
    opts: RunOptions,
) -> Result<StepOutput> {
    let t = ps.timestep;
    let input: Vec<i32> = match frame {
        Some(f) => {
            if f.shape() != g.input_dims.to_vec() {
                return Err(SdnnError::ShapeMismatch {
                    expected: g.input_dims.to_vec(),
                    actual: f.shape().to_vec(),
                });
            }
            if f.qparams() != g.input_qparams {
                return Err(SdnnError::InvalidArgument(
                    "frame is not quantized with the graph's input parameters".into(),
                ));
            }
            f.data().to_vec()
        }
        None => ps
            .last_frame
            .clone()
            .unwrap_or_else(|| vec![0; g.input_dims.len()]),
    };

    // Layers only see batches emitted on the previous step.
    let inboxes: Vec<Option<SpikeBatch>> = ps.inbox.iter_mut().map(Option::take).collect();
    let results: Vec<Result<(Option<SpikeBatch>, LayerStepMetrics)>> = match opts.execution {
        Execution::Sequential => g
            .layers
            .iter()
            .zip(ps.blocks.iter_mut())
            .zip(inboxes)
            .enumerate()
            .map(|(k, ((layer, block), inbox))| run_layer(layer, k, block, inbox, t))
            .collect(),
        Execution::LayerParallel => g
            .layers
            .par_iter()
            .zip(ps.blocks.par_iter_mut())
            .zip(inboxes.into_par_iter())
            .enumerate()
            .map(|(k, ((layer, block), inbox))| run_layer(layer, k, block, inbox, t))
            .collect(),
    };

    let enc_batch = ps.encoder.encode(&input, t)?;
    ps.last_frame = Some(input);

    let mut metrics = StepMetrics {
        timestep: t,
        encoder_spikes: enc_batch.len() as u64,
        layers: Vec::with_capacity(g.layers.len()),
    };
    let mut emitted = Vec::new();
    if opts.record_spikes {
        emitted.push(enc_batch.clone());
    }
    ps.inbox[0] = Some(enc_batch);

    let last = g.layers.len() - 1;
    let mut output = None;
    for (k, r) in results.into_iter().enumerate() {
        let (batch, m) = r?;
        metrics.layers.push(m);
        let Some(batch) = batch else { continue };
        if opts.record_spikes {
            emitted.push(batch.clone());
        }
        if k == last {
            for s in &batch.spikes {
                ps.output_sum[s.neuron as usize] += s.payload;
            }
            output = Some(batch);
        } else {
            ps.inbox[k + 1] = Some(batch);
        }
    }
    ps.timestep += 1;
    Ok(StepOutput {
        output,
        metrics,
        emitted,
    })
}

/// Result of [`run_sequence`].
#[derive(Clone, Debug)]
pub struct SequenceRun {
    /// Latency-aligned integer outputs (running sum after step `f + L`).
    pub outputs_q: Vec<QuantTensor>,
    /// The same outputs dequantized with the final layer's parameters.
    pub outputs: Vec<TensorF32>,
    pub trace: RuntimeTrace,
    /// Every emitted batch in order, when `record_spikes` was set.
    pub spikes: Vec<SpikeBatch>,
}

/// Feeds every frame through the pipeline, then flushes with `L` zero-change
/// steps so the last frame's output is collected.
pub fn run_sequence(
    g: &SdnnGraph,
    frames: &[QuantTensor],
    opts: RunOptions,
) -> Result<SequenceRun> {
    if frames.is_empty() {
        return Err(SdnnError::InvalidArgument(
            "at least one frame is required".into(),
        ));
    }
    g.validate()?;
    let depth = g.depth();
    let out_qp = g.output_qparams;
    let out_dims = g.output_dims();
    let mut ps = PipelineState::new(g);
    let mut trace = RuntimeTrace {
        frames: frames.len(),
        steps: Vec::with_capacity(frames.len() + depth),
    };
    let mut outputs_q = Vec::with_capacity(frames.len());
    let mut spikes = Vec::new();
    for t in 0..frames.len() + depth {
        let step = step_pipeline(g, &mut ps, frames.get(t), opts)?;
        trace.steps.push(step.metrics);
        spikes.extend(step.emitted);
        if t >= depth {
            outputs_q.push(QuantTensor::new(
                out_dims.to_vec(),
                ps.output_sum.clone(),
                out_qp,
            )?);
        }
    }
    let outputs = outputs_q
        .iter()
        .map(crate::quant::dequantize_tensor)
        .collect();
    Ok(SequenceRun {
        outputs_q,
        outputs,
        trace,
        spikes,
    })
}
