use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sdnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdnn"))
        .args(args)
        .output()
        .expect("spawn sdnn")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn config() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/example-energy.cfg")
        .to_str()
        .unwrap()
        .to_string()
}

fn generated(dir: &Path) {
    let out = sdnn(&[
        "gen",
        "--seed",
        "3",
        "--spec",
        "2x16x16:6k3s2p1,8k3s1p1,27k1s1p0",
        "--frames",
        "6",
        "--model",
        &p(dir, "m.sdm"),
        "--video",
        &p(dir, "v.sdt"),
        "--float-model",
        &p(dir, "f.sdf"),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = sdnn(&["gen", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    assert_eq!(sdnn(&["convert", "--out", "x.sdg"]).status.code(), Some(2));
}

#[test]
fn bad_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdnn(&[
        "gen",
        "--spec",
        "nonsense",
        "--model",
        &p(dir.path(), "m"),
        "--video",
        &p(dir.path(), "v"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exact_graph_compares_clean_and_thresholded_graph_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    assert!(sdnn(&[
        "convert",
        "--model",
        &p(d, "m.sdm"),
        "--out",
        &p(d, "g0.sdg")
    ])
    .status
    .success());
    let out = sdnn(&[
        "compare",
        "--graph",
        &p(d, "g0.sdg"),
        "--model",
        &p(d, "m.sdm"),
        "--video",
        &p(d, "v.sdt"),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max deviation 0\n"));

    assert!(sdnn(&[
        "convert",
        "--model",
        &p(d, "m.sdm"),
        "--thresholds",
        "4,4,4,4",
        "--out",
        &p(d, "g4.sdg")
    ])
    .status
    .success());
    let out = sdnn(&[
        "compare",
        "--graph",
        &p(d, "g4.sdg"),
        "--model",
        &p(d, "m.sdm"),
        "--video",
        &p(d, "v.sdt"),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn wrong_threshold_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    let out = sdnn(&[
        "convert",
        "--model",
        &p(d, "m.sdm"),
        "--thresholds",
        "1",
        "--out",
        &p(d, "g.sdg"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("g.sdg").exists());
}

#[test]
fn corrupted_input_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    let mut bytes = std::fs::read(d.join("m.sdm")).unwrap();
    bytes[40] ^= 1;
    std::fs::write(d.join("bad.sdm"), bytes).unwrap();
    let out = sdnn(&[
        "convert",
        "--model",
        &p(d, "bad.sdm"),
        "--out",
        &p(d, "g.sdg"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn quantize_reproduces_generated_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    let out = sdnn(&[
        "quantize",
        "--float-model",
        &p(d, "f.sdf"),
        "--calib",
        &p(d, "v.sdt"),
        "--out",
        &p(d, "m2.sdm"),
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(d.join("m.sdm")).unwrap(),
        std::fs::read(d.join("m2.sdm")).unwrap()
    );
}

#[test]
fn sweep_and_report_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    let cfg = config();
    let out = sdnn(&[
        "sweep",
        "--model",
        &p(d, "m.sdm"),
        "--video",
        &p(d, "v.sdt"),
        "--n",
        "0..3",
        "--energy-config",
        &cfg,
        "--out",
        &p(d, "s.csv"),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("N,metric,synops_per_frame,synop_ratio,spikes_per_frame,energy_per_frame_j,fps,latency_s,edp\n"));

    assert!(sdnn(&[
        "convert",
        "--model",
        &p(d, "m.sdm"),
        "--first-n",
        "2",
        "--out",
        &p(d, "g.sdg")
    ])
    .status
    .success());
    let out = sdnn(&[
        "report",
        "--graph",
        &p(d, "g.sdg"),
        "--video",
        &p(d, "v.sdt"),
        "--energy-config",
        &cfg,
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("latency_s = "));
}

#[test]
fn decode_rejects_mismatched_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    assert!(sdnn(&[
        "run-ref",
        "--model",
        &p(d, "m.sdm"),
        "--video",
        &p(d, "v.sdt"),
        "--out",
        &p(d, "o.sdt")
    ])
    .status
    .success());
    let out = sdnn(&[
        "decode",
        "--outputs",
        &p(d, "o.sdt"),
        "--classes",
        "5",
        "--out",
        &p(d, "det.csv"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = sdnn(&[
        "decode",
        "--outputs",
        &p(d, "o.sdt"),
        "--out",
        &p(d, "det.csv"),
    ]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(d.join("det.csv"))
        .unwrap()
        .starts_with("frame,cx,cy,w,h,objectness,class\n"));
}
