//! Event-driven executor for converted graphs.

mod encoder;
mod neuron;
mod pipeline;
mod spike;
pub mod trace_io;

pub use encoder::{delta_encode, DeltaEncoder};
pub use neuron::{neuron_step, scatter_conv, NeuronBlockState, NeuronStepStats};
pub use pipeline::{
    run_sequence, step_pipeline, Execution, LayerStepMetrics, PipelineState, RunOptions,
    RuntimeTrace, SequenceRun, StepMetrics, StepOutput,
};
pub use spike::{saturate_payload, GradedSpike, SpikeBatch, ENCODER_ORIGIN};
