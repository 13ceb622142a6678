use std::fmt::Write as _;
use std::io::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use sdnn_core::convert::{convert_with_bits, Bitwidths};
use sdnn_core::detect::{decode_grid, write_detections_csv, GridLayout};
use sdnn_core::format::{
    load_float_model, load_frames, load_graph, load_model, load_outputs, save_float_model,
    save_frames, save_graph, save_model, save_outputs, write_atomic,
};
use sdnn_core::model::quantize_model;
use sdnn_core::profile::{
    emit_report, estimate_cost, synop_ratio_for, threshold_sweep, EnergyModel, ReportFormat,
    SweepMetric,
};
use sdnn_core::quant::dequantize_tensor;
use sdnn_core::runtime::trace_io::write_sst;
use sdnn_core::runtime::{run_sequence, Execution, RunOptions};
use sdnn_core::synth::{gen_synthetic, ModelSpec, VideoKind, VideoSpec};
use sdnn_core::validate::{compare_outputs, validate_conversion};
use sdnn_core::{convert, run_reference, Dims3, RescaleMode, SdnnError, SdnnGraph};

use crate::{
    Command, CompareArgs, ConvertArgs, DecodeArgs, FormatArg, GenArgs, GridArgs, MetricArg,
    ModeArg, QuantizeArgs, ReportArgs, RunRefArgs, RunSdnnArgs, SweepArgs, UsageError, VideoArg,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Quantize(a) => quantize(a),
        Command::Convert(a) => convert_cmd(a),
        Command::RunRef(a) => run_ref(a),
        Command::RunSdnn(a) => run_sdnn(a),
        Command::Compare(a) => compare(a),
        Command::Sweep(a) => sweep(a),
        Command::Decode(a) => decode(a),
        Command::Report(a) => report(a),
    }
}

fn read<T>(load: impl FnOnce(&Path) -> sdnn_core::Result<T>, path: &Path) -> Result<T> {
    load(path).with_context(|| format!("reading {}", path.display()))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn execution(parallel: bool) -> Execution {
    if parallel {
        Execution::LayerParallel
    } else {
        Execution::Sequential
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let spec: ModelSpec = a
        .spec
        .parse()
        .map_err(|e: SdnnError| usage(e.to_string()))?;
    let kind = match a.video_kind {
        VideoArg::Blob => {
            if !(a.motion_rate.is_finite() && a.motion_rate >= 0.0) {
                return Err(usage("--motion-rate must be finite and >= 0"));
            }
            VideoKind::MovingBlob {
                blob_size: a.blob_size,
                motion_rate: a.motion_rate,
            }
        }
        VideoArg::Random => VideoKind::Random,
    };
    if a.frames == 0 {
        return Err(usage("--frames must be positive"));
    }
    let s = gen_synthetic(
        &spec,
        &VideoSpec {
            frames: a.frames,
            kind,
        },
        a.seed,
    )?;
    save_model(&s.model, &a.model).with_context(|| format!("writing {}", a.model.display()))?;
    save_frames(&s.frames, &a.video).with_context(|| format!("writing {}", a.video.display()))?;
    if let Some(p) = &a.float_model {
        save_float_model(&s.float_model, p).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "model {} ({} layers, {} MACs/frame), {} frames",
        spec,
        s.model.layers.len(),
        s.model.mac_count(),
        s.frames.len()
    );
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let fm = read(load_float_model, &a.float_model)?;
    let calib: Vec<_> = read(load_frames, &a.calib)?
        .iter()
        .map(dequantize_tensor)
        .collect();
    let m = quantize_model(&fm, &calib)?;
    save_model(&m, &a.out)?;
    println!(
        "quantized {} layers with {} calibration frames",
        m.layers.len(),
        calib.len()
    );
    Ok(())
}

fn convert_cmd(a: ConvertArgs) -> Result<()> {
    let m = read(load_model, &a.model)?;
    let depth = m.layers.len();
    let defaults = Bitwidths::default();
    let bits = Bitwidths {
        acc: a.acc_bits.unwrap_or(defaults.acc),
        spike_payload: a.payload_bits.unwrap_or(defaults.spike_payload),
        product: a.product_bits.unwrap_or(defaults.product),
        ..defaults
    };
    bits.validate().map_err(|e| usage(e.to_string()))?;
    let (encoder_th, layer_th) = match (&a.thresholds, a.first_n) {
        (Some(t), _) if t.len() == depth => (0, t.clone()),
        (Some(t), _) if t.len() == depth + 1 => (t[0], t[1..].to_vec()),
        (Some(t), _) => {
            return Err(usage(format!(
                "--thresholds needs {depth} or {} values, got {}",
                depth + 1,
                t.len()
            )))
        }
        (None, _) => (0, vec![0; depth]),
    };
    let mut g = convert_with_bits(&m, &layer_th, bits)?;
    g.encoder.v_th = encoder_th;
    if let Some(n) = a.first_n {
        if n > depth {
            return Err(usage(format!("--first-n {n} exceeds {depth} layers")));
        }
        g.apply_first_n_thresholds(n)?;
    }
    if a.round_shift {
        for l in &mut g.layers {
            l.requant.round_shift = true;
        }
    }
    save_graph(&g, &a.out)?;
    let th: Vec<String> = g.thresholds().iter().map(u32::to_string).collect();
    println!(
        "converted {depth} layers, encoder threshold {}, layer thresholds [{}]",
        g.encoder.v_th,
        th.join(",")
    );
    for (k, l) in g.layers.iter().enumerate() {
        println!(
            "layer {k}: R={:e} scale={} exp={} rel_err={:e}",
            l.requant.real_ratio,
            l.requant.scale,
            l.requant.scale_exp,
            l.requant.relative_error()
        );
    }
    Ok(())
}

fn run_ref(a: RunRefArgs) -> Result<()> {
    let m = read(load_model, &a.model)?;
    let mode = match a.mode {
        ModeArg::Float => RescaleMode::FloatScale,
        ModeArg::Fixed => RescaleMode::FixedPoint,
    };
    let mut outputs = Vec::new();
    let mut saturated = 0;
    for f in read(load_frames, &a.video)? {
        let r = run_reference(&m, &m.quantize_input(&f)?, mode)?;
        saturated += r.saturated;
        outputs.push(dequantize_tensor(r.output()));
    }
    save_outputs(&outputs, &a.out)?;
    println!(
        "{} frames, {} MACs/frame, {} clamped outputs",
        outputs.len(),
        m.mac_count(),
        saturated
    );
    Ok(())
}

fn load_inputs(g: &SdnnGraph, path: &Path) -> Result<Vec<sdnn_core::QuantTensor>> {
    Ok(g.quantize_inputs(&read(load_frames, path)?)?)
}

fn run_sdnn(a: RunSdnnArgs) -> Result<()> {
    let g = read(load_graph, &a.graph)?;
    let frames = load_inputs(&g, &a.video)?;
    let opts = RunOptions {
        execution: execution(a.parallel),
        record_spikes: a.trace.is_some(),
    };
    let run = run_sequence(&g, &frames, opts)?;
    save_outputs(&run.outputs, &a.out)?;
    if let Some(p) = &a.trace {
        let mut buf = Vec::new();
        write_sst(
            &mut buf,
            &run.spikes,
            g.depth(),
            run.trace.steps.len() as u64,
        )?;
        write_atomic(p, &buf)?;
    }
    if let Some(p) = &a.metrics {
        let mut buf = Vec::new();
        writeln!(buf, "timestep,layer,active,spikes_in,synops,spikes_out,acc_saturations,payload_saturations,clamped,max_gap")?;
        for s in &run.trace.steps {
            writeln!(
                buf,
                "{},-1,true,0,0,{},0,0,0,0",
                s.timestep, s.encoder_spikes
            )?;
            for (k, l) in s.layers.iter().enumerate() {
                writeln!(
                    buf,
                    "{},{k},{},{},{},{},{},{},{},{}",
                    s.timestep,
                    l.active,
                    l.spikes_in,
                    l.synops,
                    l.spikes_out,
                    l.acc_saturations,
                    l.payload_saturations,
                    l.clamped,
                    l.max_gap
                )?;
            }
        }
        write_atomic(p, &buf)?;
    }
    let t = &run.trace;
    let fr = t.frames as f64;
    println!(
        "{} frames, {} timesteps, synops/frame {}, spikes/frame {}, synop ratio {}, saturations {}",
        t.frames,
        t.steps.len(),
        t.total_synops() as f64 / fr,
        t.total_spikes() as f64 / fr,
        synop_ratio_for(t, g.mac_count())?,
        t.total_saturations()
    );
    Ok(())
}

/// Fails (exit 1) when any output differs from the dense reference.
fn compare(a: CompareArgs) -> Result<()> {
    let g = read(load_graph, &a.graph)?;
    let m = read(load_model, &a.model)?;
    let frames = read(load_frames, &a.video)?;
    if g.all_thresholds_zero() {
        let r = validate_conversion(&g, &m, &frames).context("conversion is not exact")?;
        println!("all layers exact over {} timesteps", r.timesteps);
    }
    let reference = convert(&m, &vec![0; m.layers.len()])?;
    let opts = RunOptions {
        execution: execution(a.parallel),
        record_spikes: false,
    };
    let r = compare_outputs(&g, &reference, &frames, opts)?;
    println!("max deviation {}", r.max_deviation);
    println!(
        "mismatched elements {}/{}, mean abs deviation {}",
        r.mismatched_elements, r.total_elements, r.mean_abs_deviation
    );
    if !r.exact() {
        bail!(
            "outputs differ from the dense reference (max deviation {})",
            r.max_deviation
        );
    }
    Ok(())
}

fn parse_n_range(s: &str, depth: usize) -> Result<RangeInclusive<usize>> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("bad --n {s:?}")))
    };
    let (lo, hi) = match s.split_once("..") {
        Some((lo, hi)) => {
            let lo = if lo.is_empty() { 0 } else { num(lo)? };
            let hi = hi.strip_prefix('=').unwrap_or(hi);
            (lo, if hi.is_empty() { depth } else { num(hi)? })
        }
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if lo > hi || hi > depth {
        return Err(usage(format!("--n {s:?} must lie within 0..={depth}")));
    }
    Ok(lo..=hi)
}

fn grid_layout(dims: Dims3, g: &GridArgs) -> Result<GridLayout> {
    let layout = GridLayout::new(dims.height, dims.width, g.boxes_per_cell, g.classes);
    if layout.channels() != dims.channels {
        return Err(usage(format!(
            "output has {} channels but {} boxes x (5 + {} classes) needs {}",
            dims.channels,
            g.boxes_per_cell,
            g.classes,
            layout.channels()
        )));
    }
    Ok(layout)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let m = read(load_model, &a.model)?;
    let frames = read(load_frames, &a.video)?;
    let em = EnergyModel::load(&a.energy_config)
        .with_context(|| format!("reading {}", a.energy_config.display()))?;
    let range = parse_n_range(&a.n, m.layers.len())?;
    let metric = match a.metric {
        MetricArg::Deviation => SweepMetric::Deviation,
        MetricArg::Detection => SweepMetric::Detection {
            layout: grid_layout(m.output_dims(), &a.grid)?,
            conf_thresh: a.grid.conf,
            iou_thresh: a.grid.iou,
        },
    };
    let result = threshold_sweep(&m, &frames, range, &metric, &em, execution(a.parallel))?;
    let format = match a.output_format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::StructuredText => ReportFormat::StructuredText,
    };
    emit_report(&result, format, &a.out)?;
    for r in &result.rows {
        println!(
            "N={} {}={} synops/frame={} ratio={}",
            r.n, result.metric_name, r.metric, r.synops_per_frame, r.synop_ratio
        );
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let outputs = read(load_outputs, &a.outputs)?;
    let first = outputs
        .first()
        .ok_or_else(|| anyhow!("no output tensors in {}", a.outputs.display()))?;
    let layout = grid_layout(first.dims3()?, &a.grid)?;
    let boxes = outputs
        .iter()
        .map(|t| decode_grid(t, &layout, a.grid.conf))
        .collect::<sdnn_core::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_detections_csv(&mut buf, &boxes)?;
    write_atomic(&a.out, &buf)?;
    println!(
        "{} detections over {} frames",
        boxes.iter().map(Vec::len).sum::<usize>(),
        boxes.len()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let g = read(load_graph, &a.graph)?;
    let frames = load_inputs(&g, &a.video)?;
    let em = EnergyModel::load(&a.energy_config)
        .with_context(|| format!("reading {}", a.energy_config.display()))?;
    let opts = RunOptions {
        execution: execution(a.parallel),
        record_spikes: false,
    };
    let run = run_sequence(&g, &frames, opts)?;
    let t = &run.trace;
    let fr = t.frames as f64;
    let cost = estimate_cost(t, &g, &em)?;
    let mut out = String::new();
    writeln!(out, "frames = {}", t.frames)?;
    writeln!(out, "layers = {}", g.depth())?;
    writeln!(out, "macs_per_frame = {}", g.mac_count())?;
    writeln!(out, "synops_per_frame = {}", t.total_synops() as f64 / fr)?;
    writeln!(out, "synop_ratio = {}", synop_ratio_for(t, g.mac_count())?)?;
    writeln!(out, "spikes_per_frame = {}", t.total_spikes() as f64 / fr)?;
    writeln!(out, "saturations = {}", t.total_saturations())?;
    for (k, s) in t.synops_per_layer().iter().enumerate() {
        writeln!(out, "layer{k}_synops_per_frame = {}", *s as f64 / fr)?;
    }
    writeln!(out, "energy_per_frame_j = {}", cost.energy_per_frame_j)?;
    writeln!(out, "latency_s = {}", cost.latency_s)?;
    writeln!(out, "fps = {}", cost.fps)?;
    writeln!(out, "edp = {}", cost.edp)?;
    match &a.out {
        Some(p) => write_atomic(p, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}
