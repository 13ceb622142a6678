//! Checks that a converted graph reproduces the dense fixed-point reference.

use crate::convert::{self, SdnnGraph};
use crate::engine::{run_graph_reference, ReferenceRun};
use crate::error::{Result, SdnnError};
use crate::model::ModelIR;
use crate::quant::QuantTensor;
use crate::runtime::{run_sequence, step_pipeline, PipelineState, RunOptions};

/// Requantizer diagnostics for one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerDiagnostics {
    /// `s_x * s_w / s_y`, the ratio the requantizer implements.
    pub real_ratio: f64,
    /// `s_y * s_x * s_w`, kept for comparison only.
    pub product_form: f64,
    pub scale: u32,
    pub scale_exp: u32,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversionReport {
    /// Largest elementwise output deviation per frame (always 0 on success).
    pub frame_max_deviation: Vec<u32>,
    pub layers: Vec<LayerDiagnostics>,
    pub timesteps: u64,
}

/// Runs the model's dense fixed-point reference and the event-driven graph
/// side by side and fails on the first differing neuron.
///
/// Every layer's `y_ref` is checked, not only the output: layer `k` holds
/// frame `f`'s activation right after timestep `f + k + 1`.
pub fn validate_conversion(
    g: &SdnnGraph,
    m: &ModelIR,
    frames: &[QuantTensor],
) -> Result<ConversionReport> {
    if frames.is_empty() {
        return Err(SdnnError::InvalidArgument(
            "validation needs at least one frame".into(),
        ));
    }
    if !g.all_thresholds_zero() {
        return Err(SdnnError::InvalidArgument(
            "exact validation requires all thresholds to be zero".into(),
        ));
    }
    if g.depth() != m.layers.len() {
        return Err(SdnnError::InvalidArgument(
            "graph and model have different depths".into(),
        ));
    }
    let reference_graph = convert::convert(m, &vec![0; m.layers.len()])?;
    let frames = g.quantize_inputs(frames)?;
    let reference: Vec<ReferenceRun> = frames
        .iter()
        .map(|f| run_graph_reference(&reference_graph, f))
        .collect::<Result<_>>()?;

    let depth = g.depth();
    let mut ps = PipelineState::new(g);
    let mut frame_max_deviation = vec![0u32; frames.len()];
    for t in 0..frames.len() + depth {
        step_pipeline(g, &mut ps, frames.get(t), RunOptions::default())?;
        for k in 0..depth {
            let Some(f) = t.checked_sub(k + 1).filter(|f| *f < frames.len()) else {
                continue;
            };
            let want = reference[f].activations[k].data();
            let got = &ps.block(k).y_ref;
            if let Some(n) = (0..want.len()).find(|&n| got[n] != want[n]) {
                return Err(SdnnError::ConversionMismatch {
                    frame: f,
                    layer: k,
                    neuron: n,
                    timestep: t as u64,
                    sdnn: got[n],
                    reference: want[n],
                });
            }
            if k == depth - 1 {
                let dev = ps
                    .output_sum()
                    .iter()
                    .zip(want)
                    .map(|(a, b)| a.abs_diff(*b))
                    .max()
                    .unwrap_or(0);
                frame_max_deviation[f] = dev;
            }
        }
    }

    let layers = m
        .layers
        .iter()
        .zip(&g.layers)
        .map(|(spec, l)| LayerDiagnostics {
            real_ratio: l.requant.real_ratio,
            product_form: spec.out_qparams.scale * spec.acc_scale(),
            scale: l.requant.scale,
            scale_exp: l.requant.scale_exp,
            relative_error: l.requant.relative_error(),
        })
        .collect();
    Ok(ConversionReport {
        frame_max_deviation,
        layers,
        timesteps: ps.timestep(),
    })
}

/// Elementwise comparison of latency-aligned SDNN outputs with a dense
/// reference graph (whose thresholds are ignored).
#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub frame_max_deviation: Vec<u32>,
    pub max_deviation: u32,
    pub mismatched_elements: u64,
    pub total_elements: u64,
    /// Mean absolute deviation of dequantized outputs.
    pub mean_abs_deviation: f64,
}

impl CompareReport {
    pub fn exact(&self) -> bool {
        self.max_deviation == 0
    }
}

pub fn compare_outputs(
    g: &SdnnGraph,
    reference: &SdnnGraph,
    frames: &[QuantTensor],
    opts: RunOptions,
) -> Result<CompareReport> {
    if g.output_dims() != reference.output_dims() || g.input_dims != reference.input_dims {
        return Err(SdnnError::InvalidArgument(
            "graph and reference have different shapes".into(),
        ));
    }
    let frames = g.quantize_inputs(frames)?;
    let run = run_sequence(g, &frames, opts)?;
    let scale = g.output_qparams.scale;
    let mut report = CompareReport {
        frame_max_deviation: Vec::with_capacity(frames.len()),
        max_deviation: 0,
        mismatched_elements: 0,
        total_elements: 0,
        mean_abs_deviation: 0.0,
    };
    let mut abs_sum = 0.0;
    for (f, out) in frames.iter().zip(&run.outputs_q) {
        let want = run_graph_reference(reference, f)?;
        let mut frame_max = 0;
        for (a, b) in out.data().iter().zip(want.output().data()) {
            let d = a.abs_diff(*b);
            frame_max = frame_max.max(d);
            report.mismatched_elements += (d != 0) as u64;
            report.total_elements += 1;
            abs_sum += d as f64 * scale;
        }
        report.frame_max_deviation.push(frame_max);
        report.max_deviation = report.max_deviation.max(frame_max);
    }
    if report.total_elements > 0 {
        report.mean_abs_deviation = abs_sum / report.total_elements as f64;
    }
    Ok(report)
}
