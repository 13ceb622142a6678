use thiserror::Error;

/// Errors raised anywhere in the conversion and emulation pipeline.
#[derive(Debug, Error)]
pub enum SdnnError {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("invalid quantization parameters: {0}")]
    InvalidQParams(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("observer finalized before any observation")]
    EmptyObserver,

    #[error("accumulator overflow in layer {layer}: value {value} exceeds {bits}-bit range")]
    AccumulatorOverflow { layer: usize, value: i64, bits: u32 },

    #[error("product overflow in layer {layer}: {value} * {scale} exceeds {bits}-bit register")]
    ProductOverflow {
        layer: usize,
        value: i64,
        scale: u32,
        bits: u32,
    },

    #[error("rescale ratio {0} is not representable as a 24-bit fixed-point multiplier")]
    UnrepresentableRatio(f64),

    #[error("folded bias {value} for output channel {channel} exceeds the {bits}-bit accumulator")]
    BiasOutOfRange {
        channel: usize,
        value: i64,
        bits: u32,
    },

    #[error(
        "conversion mismatch at frame {frame}, layer {layer}, neuron {neuron}, \
         timestep {timestep}: sdnn {sdnn} vs reference {reference}"
    )]
    ConversionMismatch {
        frame: usize,
        layer: usize,
        neuron: usize,
        timestep: u64,
        sdnn: i32,
        reference: i32,
    },

    #[error("unsupported format version {found} (supported: {supported:?})")]
    UnsupportedVersion { found: u32, supported: Vec<u32> },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SdnnError>;
