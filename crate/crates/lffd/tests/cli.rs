use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lffd::annotations::{format_annotations, read_annotations};
use lffd::bench::BenchReport;
use lffd::detections::DetectionRecord;
use lffd::eval::EvalReport;
use lffd::inspect;
use lffd::train_loop::{LogRow, LOSS_LOG_HEADER};

const TINY: &str = r#"
[network]
variant = "desk"
width = 4

[train]
batch_size = 2
lr0 = 0.01
lr_drop_iters = [4]
total_iters = 6
crop = 96
seed = 3

[synth]
width = 96
height = 96
count = 6
size_bands = [[10.0, 15.0, 1.0], [20.0, 40.0, 1.0]]
"#;

fn lffd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lffd"))
        .args(args)
        .env("LFFD_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lffd(args);
    assert!(
        out.status.success(),
        "lffd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn inspect_outputs_parse_back() {
    let text = ok(&["inspect"]);
    assert_eq!(text.lines().count(), 26);
    assert!(text.lines().any(|l| l.starts_with("c8 ") && l.contains(" 55 ") && l.contains("4.40")));
    let csv = ok(&["inspect", "--csv"]);
    let rows = inspect::parse_csv(&csv).unwrap();
    assert_eq!(rows.len(), 25);
    assert_eq!(rows[24].branch.unwrap().0, 8);
    let json: Vec<inspect::InspectRow> = serde_json::from_str(&ok(&["inspect", "--json"])).unwrap();
    assert_eq!(json, inspect::inspect_rows(&lffd_core::net::NetworkConfig::reference()));
}

#[test]
fn count_reports_reference_sizes() {
    let text = ok(&["count"]);
    assert!(text.contains("2173616"));
    let v: serde_json::Value = serde_json::from_str(&ok(&["count", "--json"])).unwrap();
    assert_eq!(v["params"], 2_173_616);
    assert_eq!(v["backbone_params"], 1_920_896);
}

#[test]
fn bench_csv_and_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let csv = ok(&["--config", &cfg, "bench", "--res", "64x48,100x70", "--warmup", "1", "--runs", "3", "--csv"]);
    let reports: Vec<BenchReport> = csv.lines().skip(1).map(|l| BenchReport::parse_csv(l).unwrap()).collect();
    assert_eq!(reports.len(), 2);
    assert_eq!((reports[1].padded_width, reports[1].padded_height), (104, 72));
    for r in &reports {
        assert!(r.p95_ms >= r.median_ms && r.median_ms >= 0.0);
        assert!((r.e_net - r.flops as f64 / 1e9 / r.mean_ms).abs() <= 1e-9 * r.e_net);
        assert_eq!(r.threads, 1);
    }
    let json = ok(&["--config", &cfg, "bench", "--res", "64x48", "--warmup", "0", "--runs", "2", "--json"]);
    let r: BenchReport = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(r.runs, 2);
}

#[test]
fn bench_latency_grows_with_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let csv = ok(&["--config", &cfg, "bench", "--res", "32x32,128x128,512x512", "--warmup", "3", "--runs", "30", "--csv"]);
    let medians: Vec<f64> = csv.lines().skip(1).map(|l| BenchReport::parse_csv(l).unwrap().median_ms).collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["bench", "--res", "0x480"],
        vec!["detect", "--model", "/nonexistent/model.lffd", "x.ppm"],
        vec!["--config", "/nonexistent/cfg.toml", "count"],
        vec!["count", "--width", "0"],
    ] {
        let out = lffd(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "a.ppm 1 2 3\n").unwrap();
    let model = dir.path().join("m.lffd");
    fs::write(&model, b"LFFD").unwrap();
    let out = lffd(&["eval", "--model", model.to_str().unwrap(), "--data", bad.to_str().unwrap()]);
    assert!(!out.status.success());
}

/// synth → train → detect → eval through the binary.
#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    let synth = ok(&["--config", &cfg, "--seed", "4", "synth", "--out", data.to_str().unwrap(), "--count", "5"]);
    assert!(synth.starts_with("wrote 5 images"));
    let ann = data.join("annotations.txt");
    assert_eq!(read_annotations(&ann).unwrap().len(), 5);

    let run = dir.path().join("run");
    let out = ok(&[
        "--config", &cfg, "--deterministic", "train", "--out", run.to_str().unwrap(),
        "--data", ann.to_str().unwrap(), "--log-every", "2", "--checkpoint-every", "3",
    ]);
    assert!(out.contains("sha256 "));
    let log = fs::read_to_string(run.join("loss.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOSS_LOG_HEADER));
    let rows: Vec<LogRow> = lines.map(|l| LogRow::parse_csv(l).unwrap()).collect();
    assert_eq!(rows.iter().map(|r| r.iter).collect::<Vec<_>>(), [2, 4, 6]);
    assert_eq!(rows[0].lr, 0.01);
    assert!((rows[2].lr - 0.001).abs() < 1e-12);
    assert!(run.join("checkpoint_0000003.lffd").exists());
    let model = run.join("model.lffd");
    let model = model.to_str().unwrap();

    let img = data.join("images").join("00000.ppm");
    let vis = dir.path().join("vis");
    let lines = ok(&[
        "--config", &cfg, "detect", "--model", model, "--score-thresh", "0.0", "--out",
        vis.to_str().unwrap(), img.to_str().unwrap(),
    ]);
    let rec = DetectionRecord::parse_json_line(lines.trim()).unwrap();
    assert_eq!(rec.path, img.to_str().unwrap());
    assert!(!rec.boxes.is_empty());
    for b in &rec.boxes {
        assert!(b[0] < b[2] && b[1] < b[3] && (0.0..=1.0).contains(&b[4]));
        assert!((1.0..=4.0).contains(&b[5]));
    }
    assert!(vis.join("00000.ppm").exists());
    assert_eq!(ok(&["--config", &cfg, "detect", "--model", model, img.to_str().unwrap()]),
               ok(&["--config", &cfg, "detect", "--model", model, img.to_str().unwrap()]));

    let report: EvalReport = serde_json::from_str(&ok(&[
        "--config", &cfg, "eval", "--model", model, "--data", ann.to_str().unwrap(), "--json",
    ]))
    .unwrap();
    let faces: usize = read_annotations(&ann).unwrap().iter().map(|a| a.faces.len()).sum();
    assert_eq!(report.tp + report.fn_, faces);
    assert!((0.0..=1.0).contains(&report.precision) && (0.0..=1.0).contains(&report.recall));
    assert_eq!(report.bands.len(), 4);

    let mut shuffled = read_annotations(&ann).unwrap();
    shuffled.reverse();
    let ann2 = data.join("reversed.txt");
    fs::write(&ann2, format_annotations(&shuffled)).unwrap();
    let report2: EvalReport = serde_json::from_str(&ok(&[
        "--config", &cfg, "eval", "--model", model, "--data", ann2.to_str().unwrap(), "--json",
    ]))
    .unwrap();
    assert_eq!(report, report2);
}
