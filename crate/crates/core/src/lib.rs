//! Conversion of quantized convolutional networks into sigma-delta
//! graded-spike networks, with a bit-exact integer emulation of the
//! neuromorphic execution pipeline.
//!
//! The flow is:
//!
//! 1. [`model`]: float model, min-max calibration, per-tensor 8-bit quantization.
//! 2. [`engine`]: dense integer reference (framework float rescale, or
//!    hardware fixed-point rescale).
//! 3. [`convert`]: 24-bit requantizers, folded integer biases, thresholds.
//! 4. [`runtime`]: delta encoder, event-driven convolution, neuron update,
//!    one-timestep-per-layer pipeline, output running sum.
//! 5. [`profile`] and [`detect`]: sparsity, cost model, threshold sweeps and
//!    grid decoding of the output.

pub mod convert;
pub mod detect;
pub mod engine;
pub mod error;
pub mod format;
pub mod model;
pub mod profile;
pub mod quant;
pub mod runtime;
pub mod synth;
pub mod tensor;
pub mod validate;

pub use convert::{convert, Bitwidths, EncoderSpec, Requantizer, SdnnGraph, SdnnLayer};
pub use detect::{BoundingBox, GridLayout};
pub use engine::{run_graph_reference, run_reference, ReferenceRun, RescaleMode};
pub use error::{Result, SdnnError};
pub use model::{Activation, ConvGeometry, ConvLayerSpec, FloatModel, ModelIR};
pub use profile::{EnergyModel, ReportFormat, SweepMetric, SweepResult};
pub use quant::{DType, MinMaxObserver, QuantParams, QuantTensor};
pub use runtime::{run_sequence, RunOptions, RuntimeTrace, SequenceRun, SpikeBatch};
pub use tensor::{Dims3, TensorF32};
pub use validate::{compare_outputs, validate_conversion, CompareReport, ConversionReport};
