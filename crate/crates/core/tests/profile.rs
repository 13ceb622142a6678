use std::path::PathBuf;

use sdnn_core::convert;
use sdnn_core::detect::GridLayout;
use sdnn_core::profile::{
    estimate_cost, read_report_csv, threshold_sweep, write_report, EnergyModel, ReportFormat,
    SweepMetric,
};
use sdnn_core::runtime::{run_sequence, Execution, RunOptions};
use sdnn_core::synth::{gen_synthetic, ModelSpec, Synthetic, VideoKind, VideoSpec};

const EM: EnergyModel = EnergyModel {
    static_power_w: 1.25,
    energy_per_synop_j: 2.5e-11,
    energy_per_spike_j: 1.0e-10,
    timestep_s: 0.004,
};

fn corpus_video() -> Synthetic {
    let spec: ModelSpec = "3x24x24:8k3s2p1,12k3s1p1,27k1s1p0".parse().unwrap();
    let video = VideoSpec {
        frames: 16,
        kind: VideoKind::MovingBlob {
            blob_size: 6,
            motion_rate: 0.5,
        },
    };
    gen_synthetic(&spec, &video, 2).unwrap()
}

#[test]
fn sweep_rows_are_ordered_and_trend_down() {
    let s = corpus_video();
    let r = threshold_sweep(
        &s.model,
        &s.frames,
        0..=3,
        &SweepMetric::Deviation,
        &EM,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(
        r.rows.iter().map(|r| r.n).collect::<Vec<_>>(),
        vec![0, 1, 2, 3]
    );
    assert_eq!(r.rows[0].metric, 0.0);
    for w in r.rows.windows(2) {
        assert!(w[1].synops_per_frame <= w[0].synops_per_frame);
    }
    assert!(r.rows.iter().all(|row| row.synop_ratio < 1.0));
    assert!(threshold_sweep(
        &s.model,
        &s.frames,
        0..=4,
        &SweepMetric::Deviation,
        &EM,
        Execution::Sequential
    )
    .is_err());
}

#[test]
fn detection_metric_is_perfect_without_thresholds() {
    let s = corpus_video();
    let metric = SweepMetric::Detection {
        layout: GridLayout::new(12, 12, 3, 4),
        // Every box is decoded, so the match is checked on all 432 per frame.
        conf_thresh: 0.0,
        iou_thresh: 0.99,
    };
    let r = threshold_sweep(
        &s.model,
        &s.frames,
        0..=0,
        &metric,
        &EM,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(r.rows[0].metric, 1.0);
}

#[test]
fn parallel_sweep_matches_sequential_bytes() {
    let s = corpus_video();
    let render = |e| {
        let r =
            threshold_sweep(&s.model, &s.frames, 0..=3, &SweepMetric::Deviation, &EM, e).unwrap();
        let mut buf = Vec::new();
        write_report(&r, ReportFormat::Csv, &mut buf).unwrap();
        buf
    };
    assert_eq!(
        render(Execution::Sequential),
        render(Execution::LayerParallel)
    );
}

#[test]
fn golden_sweep_csv() {
    let s = corpus_video();
    let r = threshold_sweep(
        &s.model,
        &s.frames,
        0..=3,
        &SweepMetric::Deviation,
        &EM,
        Execution::Sequential,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_report(&r, ReportFormat::Csv, &mut buf).unwrap();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/sweep_deviation.csv");
    if std::env::var_os("SDNN_BLESS").is_some() {
        std::fs::write(&path, &buf).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden file missing; rerun with SDNN_BLESS=1");
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        String::from_utf8(golden.clone()).unwrap()
    );
    assert_eq!(read_report_csv(golden.as_slice()).unwrap().rows, r.rows);
}

#[test]
fn cost_is_linear_in_synops() {
    let s = corpus_video();
    let g = convert(&s.model, &[0; 3]).unwrap();
    let frames = g.quantize_inputs(&s.frames).unwrap();
    let opts = RunOptions {
        execution: Execution::Sequential,
        record_spikes: false,
    };
    let trace = run_sequence(&g, &frames, opts).unwrap().trace;
    let base = estimate_cost(&trace, &g, &EM).unwrap();
    let doubled = EnergyModel {
        energy_per_synop_j: 2.0 * EM.energy_per_synop_j,
        ..EM
    };
    let c2 = estimate_cost(&trace, &g, &doubled).unwrap();
    let synop_part = trace.total_synops() as f64 / trace.frames as f64 * EM.energy_per_synop_j;
    assert!(((c2.energy_per_frame_j - base.energy_per_frame_j) - synop_part).abs() < 1e-15);
    assert!((base.latency_s - 3.0 * EM.timestep_s).abs() < 1e-15);
    let powered = EnergyModel {
        static_power_w: EM.static_power_w + 1.0,
        ..EM
    };
    let c3 = estimate_cost(&trace, &g, &powered).unwrap();
    assert!(((c3.energy_per_frame_j - base.energy_per_frame_j) - EM.timestep_s).abs() < 1e-15);
}

#[test]
fn structured_text_lists_every_column() {
    let s = corpus_video();
    let r = threshold_sweep(
        &s.model,
        &s.frames,
        1..=2,
        &SweepMetric::Deviation,
        &EM,
        Execution::Sequential,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_report(&r, ReportFormat::StructuredText, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.matches("[row]").count(), 2);
    assert!(text.starts_with("# sweep metric=deviation\n"));
    assert!(text.contains("\nN = 2\n"));
}
