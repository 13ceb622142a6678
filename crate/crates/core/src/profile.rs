//! Synop accounting, the analytical cost model and the threshold sweep.

use std::fmt;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::convert::{convert, SdnnGraph};
use crate::detect::{decode_grid, score_detections, GridLayout};
use crate::engine::run_graph_reference;
use crate::error::{Result, SdnnError};
use crate::format::write_atomic;
use crate::model::ModelIR;
use crate::quant::{dequantize_tensor, QuantTensor};
use crate::runtime::{run_sequence, Execution, RunOptions, RuntimeTrace};
use crate::tensor::TensorF32;

/// Per-event energy constants. Not measurements of any chip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyModel {
    pub static_power_w: f64,
    pub energy_per_synop_j: f64,
    pub energy_per_spike_j: f64,
    pub timestep_s: f64,
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("static_power_w", self.static_power_w),
            ("energy_per_synop_j", self.energy_per_synop_j),
            ("energy_per_spike_j", self.energy_per_spike_j),
            ("timestep_s", self.timestep_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(SdnnError::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.timestep_s == 0.0 {
            return Err(SdnnError::InvalidArgument(
                "timestep_s must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment. All four keys are required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 4] = [None; 4];
        const KEYS: [&str; 4] = [
            "static_power_w",
            "energy_per_synop_j",
            "energy_per_spike_j",
            "timestep_s",
        ];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SdnnError::Format(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let slot = KEYS.iter().position(|key| *key == k).ok_or_else(|| {
                SdnnError::Format(format!("line {}: unknown key {k:?}", lineno + 1))
            })?;
            let parsed: f64 = v
                .parse()
                .map_err(|_| SdnnError::Format(format!("line {}: bad number {v:?}", lineno + 1)))?;
            vals[slot] = Some(parsed);
        }
        let get =
            |i: usize| vals[i].ok_or_else(|| SdnnError::Format(format!("missing key {}", KEYS[i])));
        let em = Self {
            static_power_w: get(0)?,
            energy_per_synop_j: get(1)?,
            energy_per_spike_j: get(2)?,
            timestep_s: get(3)?,
        };
        em.validate()?;
        Ok(em)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// (total synops / frames) / (dense MACs per frame).
pub fn synop_ratio(trace: &RuntimeTrace, m: &ModelIR) -> Result<f64> {
    synop_ratio_for(trace, m.mac_count())
}

pub fn synop_ratio_for(trace: &RuntimeTrace, macs_per_frame: u64) -> Result<f64> {
    if trace.frames == 0 {
        return Err(SdnnError::InvalidArgument(
            "trace covers zero frames".into(),
        ));
    }
    if macs_per_frame == 0 {
        return Err(SdnnError::InvalidModel("model has zero MACs".into()));
    }
    Ok(trace.total_synops() as f64 / trace.frames as f64 / macs_per_frame as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEstimate {
    pub energy_per_frame_j: f64,
    pub latency_s: f64,
    pub fps: f64,
    pub edp: f64,
}

pub fn estimate_cost(
    trace: &RuntimeTrace,
    g: &SdnnGraph,
    em: &EnergyModel,
) -> Result<CostEstimate> {
    if trace.frames == 0 {
        return Err(SdnnError::InvalidArgument(
            "trace covers zero frames".into(),
        ));
    }
    let f = trace.frames as f64;
    cost_from_counts(
        g.depth(),
        trace.total_synops() as f64 / f,
        trace.total_spikes() as f64 / f,
        em,
    )
}

pub fn cost_from_counts(
    depth: usize,
    synops_per_frame: f64,
    spikes_per_frame: f64,
    em: &EnergyModel,
) -> Result<CostEstimate> {
    em.validate()?;
    let latency_s = depth as f64 * em.timestep_s;
    let energy_per_frame_j = em.static_power_w * em.timestep_s
        + synops_per_frame * em.energy_per_synop_j
        + spikes_per_frame * em.energy_per_spike_j;
    let power = energy_per_frame_j / em.timestep_s;
    Ok(CostEstimate {
        energy_per_frame_j,
        latency_s,
        fps: 1.0 / em.timestep_s,
        edp: power * em.timestep_s * latency_s,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepMetric {
    /// Mean absolute deviation of dequantized outputs from the dense reference.
    Deviation,
    /// Detection F1 against detections decoded from the dense reference.
    Detection {
        layout: GridLayout,
        conf_thresh: f64,
        iou_thresh: f64,
    },
}

impl SweepMetric {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMetric::Deviation => "deviation",
            SweepMetric::Detection { .. } => "detection_f1",
        }
    }

    fn score(&self, outputs: &[TensorF32], reference: &[TensorF32]) -> Result<f64> {
        match self {
            SweepMetric::Deviation => {
                let mut sum = 0.0;
                for (o, r) in outputs.iter().zip(reference) {
                    sum += o.mean_abs_diff(r)?;
                }
                Ok(sum / outputs.len() as f64)
            }
            SweepMetric::Detection {
                layout,
                conf_thresh,
                iou_thresh,
            } => {
                let decode = |ts: &[TensorF32]| -> Result<Vec<_>> {
                    ts.iter()
                        .map(|t| decode_grid(t, layout, *conf_thresh))
                        .collect()
                };
                Ok(score_detections(&decode(outputs)?, &decode(reference)?, *iou_thresh)?.f1)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub metric: f64,
    pub synops_per_frame: f64,
    pub synop_ratio: f64,
    pub spikes_per_frame: f64,
    pub cost: CostEstimate,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub metric_name: String,
    pub rows: Vec<SweepRow>,
}

/// Runs the sequence once per `N` with threshold 1 on the encoder plus the
/// first `N - 1` layers. Frames are requantized to the model input first.
/// Rows come back ordered by `N`.
pub fn threshold_sweep(
    m: &ModelIR,
    frames: &[QuantTensor],
    n_range: RangeInclusive<usize>,
    metric: &SweepMetric,
    em: &EnergyModel,
    execution: Execution,
) -> Result<SweepResult> {
    em.validate()?;
    let base = convert(m, &vec![0; m.layers.len()])?;
    let depth = base.depth();
    if *n_range.end() > depth {
        return Err(SdnnError::InvalidArgument(format!(
            "N range ends at {} but the graph has {depth} layers",
            n_range.end()
        )));
    }
    if frames.is_empty() {
        return Err(SdnnError::InvalidArgument(
            "at least one frame is required".into(),
        ));
    }
    let frames = &base.quantize_inputs(frames)?;
    let macs = m.mac_count();
    let reference: Vec<TensorF32> = frames
        .par_iter()
        .map(|f| Ok(dequantize_tensor(run_graph_reference(&base, f)?.output())))
        .collect::<Result<_>>()?;
    let ns: Vec<usize> = n_range.collect();
    let rows = ns
        .par_iter()
        .map(|&n| {
            let mut g = base.clone();
            g.apply_first_n_thresholds(n)?;
            let opts = RunOptions {
                execution,
                record_spikes: false,
            };
            let run = run_sequence(&g, frames, opts)?;
            let f = run.trace.frames as f64;
            let synops_per_frame = run.trace.total_synops() as f64 / f;
            let spikes_per_frame = run.trace.total_spikes() as f64 / f;
            Ok(SweepRow {
                n,
                metric: metric.score(&run.outputs, &reference)?,
                synops_per_frame,
                synop_ratio: synop_ratio_for(&run.trace, macs)?,
                spikes_per_frame,
                cost: cost_from_counts(depth, synops_per_frame, spikes_per_frame, em)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        metric_name: metric.name().to_string(),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    StructuredText,
}

impl FromStr for ReportFormat {
    type Err = SdnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "structured-text" | "text" => Ok(Self::StructuredText),
            other => Err(SdnnError::InvalidArgument(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::StructuredText => "structured-text",
        })
    }
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "N",
    "metric",
    "synops_per_frame",
    "synop_ratio",
    "spikes_per_frame",
    "energy_per_frame_j",
    "fps",
    "latency_s",
    "edp",
];

fn row_fields(r: &SweepRow) -> [String; 9] {
    [
        r.n.to_string(),
        r.metric.to_string(),
        r.synops_per_frame.to_string(),
        r.synop_ratio.to_string(),
        r.spikes_per_frame.to_string(),
        r.cost.energy_per_frame_j.to_string(),
        r.cost.fps.to_string(),
        r.cost.latency_s.to_string(),
        r.cost.edp.to_string(),
    ]
}

pub fn write_report<W: Write>(result: &SweepResult, format: ReportFormat, mut w: W) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(REPORT_COLUMNS)?;
            for r in &result.rows {
                out.write_record(row_fields(r))?;
            }
            out.flush()?;
        }
        ReportFormat::StructuredText => {
            writeln!(w, "# sweep metric={}", result.metric_name)?;
            writeln!(w, "# columns {}", REPORT_COLUMNS.join(" "))?;
            for r in &result.rows {
                writeln!(w)?;
                writeln!(w, "[row]")?;
                for (k, v) in REPORT_COLUMNS.iter().zip(row_fields(r)) {
                    writeln!(w, "{k} = {v}")?;
                }
            }
        }
    }
    Ok(())
}

pub fn emit_report(result: &SweepResult, format: ReportFormat, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_report(result, format, &mut buf)?;
    write_atomic(path, &buf)
}

/// Parses a CSV written by [`write_report`]. The metric name is not stored
/// in CSV and comes back empty.
pub fn read_report_csv<R: std::io::Read>(r: R) -> Result<SweepResult> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().ne(REPORT_COLUMNS.iter().copied()) {
        return Err(SdnnError::Format("unexpected report header".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| SdnnError::Format(format!("bad number {:?}", &rec[i])))
        };
        rows.push(SweepRow {
            n: rec[0]
                .parse()
                .map_err(|_| SdnnError::Format(format!("bad N {:?}", &rec[0])))?,
            metric: num(1)?,
            synops_per_frame: num(2)?,
            synop_ratio: num(3)?,
            spikes_per_frame: num(4)?,
            cost: CostEstimate {
                energy_per_frame_j: num(5)?,
                fps: num(6)?,
                latency_s: num(7)?,
                edp: num(8)?,
            },
        });
    }
    Ok(SweepResult {
        metric_name: String::new(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn em(static_w: f64, syn: f64, spike: f64, dt: f64) -> EnergyModel {
        EnergyModel {
            static_power_w: static_w,
            energy_per_synop_j: syn,
            energy_per_spike_j: spike,
            timestep_s: dt,
        }
    }

    #[test]
    fn parse_config() {
        let text = "# comment\nstatic_power_w = 1.5\nenergy_per_synop_j=2e-11 # trailing\n\nenergy_per_spike_j = 1e-10\ntimestep_s = 0.00363\n";
        let m = EnergyModel::parse(text).unwrap();
        assert_eq!(m, em(1.5, 2e-11, 1e-10, 0.00363));
        assert!(EnergyModel::parse("static_power_w = 1").is_err());
        assert!(EnergyModel::parse(&text.replace("1.5", "-1")).is_err());
        assert!(EnergyModel::parse(&text.replace("0.00363", "0")).is_err());
        assert!(EnergyModel::parse(&format!("{text}bogus = 1\n")).is_err());
    }

    #[test]
    fn static_only_energy() {
        let c = cost_from_counts(4, 1e6, 1e3, &em(2.0, 0.0, 0.0, 0.01)).unwrap();
        assert_eq!(c.energy_per_frame_j, 2.0 * 0.01);
    }

    #[test]
    fn latency_and_fps() {
        let c = cost_from_counts(10, 0.0, 0.0, &em(1.0, 0.0, 0.0, 3.63e-3)).unwrap();
        assert!((c.latency_s - 0.0363).abs() < 1e-12);
        assert_eq!(c.fps.round(), 275.0);
    }

    #[test]
    fn doubling_timestep_quadruples_edp_at_fixed_power() {
        let a = cost_from_counts(5, 0.0, 0.0, &em(3.0, 0.0, 0.0, 0.002)).unwrap();
        let b = cost_from_counts(5, 0.0, 0.0, &em(3.0, 0.0, 0.0, 0.004)).unwrap();
        assert!((b.edp / a.edp - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_timestep_is_an_error() {
        assert!(cost_from_counts(1, 0.0, 0.0, &em(1.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn empty_trace_ratio_is_an_error() {
        let t = RuntimeTrace {
            frames: 0,
            steps: vec![],
        };
        assert!(synop_ratio_for(&t, 10).is_err());
    }

    #[test]
    fn empty_result_is_header_only() {
        let mut buf = Vec::new();
        write_report(&SweepResult::default(), ReportFormat::Csv, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{}\n", REPORT_COLUMNS.join(","))
        );
    }

    #[test]
    fn csv_round_trip() {
        let row = SweepRow {
            n: 3,
            metric: 0.125,
            synops_per_frame: 1234.5,
            synop_ratio: 0.1 + 0.2,
            spikes_per_frame: 17.0,
            cost: cost_from_counts(4, 1234.5, 17.0, &em(1.0, 1e-11, 3e-10, 0.003)).unwrap(),
        };
        let res = SweepResult {
            metric_name: "deviation".into(),
            rows: vec![row.clone()],
        };
        let mut buf = Vec::new();
        write_report(&res, ReportFormat::Csv, &mut buf).unwrap();
        let back = read_report_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, vec![row]);
    }
}
