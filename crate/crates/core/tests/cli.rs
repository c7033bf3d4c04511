use std::path::Path;
use std::process::{Command, Output};

use hbfp::bfp::{quantize_tensor, Blocking, QuantConfig};
use hbfp::io::{read_quantized_file, read_tensor_file, write_tensor_file};
use hbfp::Tensor;

fn hbfp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbfp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn quantize_dequantize_round_trip_is_within_half_step() {
    let dir = tempfile::tempdir().unwrap();
    let x = Tensor::from_fn(vec![3, 100], |i| ((i * 7919 % 1000) as f32 - 500.0) / 37.0);
    write_tensor_file(&dir.path().join("x.hbt"), &x).unwrap();
    let o = hbfp(
        dir.path(),
        &["quantize", "--in", "x.hbt", "--mantissa", "4", "--block", "64", "--out", "x.hbq"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = hbfp(dir.path(), &["dequantize", "--in", "x.hbq", "--out", "y.hbt"]);
    assert_eq!(o.status.code(), Some(0));

    let q = read_quantized_file(&dir.path().join("x.hbq")).unwrap();
    assert_eq!(q, quantize_tensor(&x, &QuantConfig::hbfp(4, 64).unwrap(), Blocking::Rows).unwrap());
    let y = read_tensor_file(&dir.path().join("y.hbt")).unwrap();
    assert_eq!(y.shape(), x.shape());
    for (row_x, row_y) in x.data().chunks(100).zip(y.data().chunks(100)) {
        for (bx, by) in row_x.chunks(64).zip(row_y.chunks(64)) {
            let max = bx.iter().fold(0f32, |m, v| m.max(v.abs()));
            let e = max.log2().floor() as i32 + 1;
            let step = 2f64.powi(e - 3);
            for (a, b) in bx.iter().zip(by) {
                let err = (f64::from(*a) - f64::from(*b)).abs();
                let saturated = (f64::from(*a) / step).round().abs() > 7.0;
                assert!(err <= if saturated { step } else { step / 2.0 });
            }
        }
    }
    assert!(dir.path().join("x.hbq.manifest.json").exists());
}

#[test]
fn density_grid_has_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = hbfp(
        dir.path(),
        &["density", "--formats", "hbfp4,hbfp6,hbfp8", "--blocks", "16,64,256,576", "--csv", "d.csv"],
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("format,block_size,bits_per_element"));
}

#[test]
fn density_calibration_from_env() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"c_mul": 12}"#).unwrap();
    let with = Command::new(env!("CARGO_BIN_EXE_hbfp"))
        .current_dir(dir.path())
        .env("HBFP_CALIB", "c.json")
        .args(["density", "--formats", "hbfp4"])
        .output()
        .unwrap();
    let without = hbfp(dir.path(), &["density", "--formats", "hbfp4"]);
    assert_eq!(with.status.code(), Some(0));
    assert_ne!(stdout(&with), stdout(&without));
    std::fs::write(dir.path().join("bad.json"), r#"{"c_mull": 12}"#).unwrap();
    let bad = hbfp(dir.path(), &["density", "--calib", "bad.json"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn checks_report_json_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = hbfp(dir.path(), &["emulate-check", "--random", "1000", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["cases"], 63 * 63 + 1000);
    let o = hbfp(dir.path(), &["matmul-check", "--cases", "20", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["mismatches"], 0);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["density", "--unknown-flag"],
        vec!["dequantize", "--in", "missing.hbq", "--out", "y.hbt"],
        vec!["quantize", "--in", "x.hbt", "--mantissa", "12", "--out", "x.hbq"],
    ] {
        let o = hbfp(dir.path(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(o.stdout.is_empty());
        assert!(!o.stderr.is_empty());
    }
    // A tensor file handed to the quantized reader has the wrong magic.
    write_tensor_file(&dir.path().join("x.hbt"), &Tensor::zeros(vec![4])).unwrap();
    let o = hbfp(dir.path(), &["dequantize", "--in", "x.hbt", "--out", "y.hbt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn wasserstein_scalar_and_json() {
    let dir = tempfile::tempdir().unwrap();
    write_tensor_file(
        &dir.path().join("t.hbt"),
        &Tensor::new(vec![4], vec![1.0, 0.5, -0.25, 0.0]).unwrap(),
    )
    .unwrap();
    let o = hbfp(dir.path(), &["analyze", "wasserstein", "--in", "t.hbt", "--mantissa", "4", "--block", "4"]);
    assert_eq!(stdout(&o).trim(), "0");
    let o = hbfp(
        dir.path(),
        &["--json", "analyze", "wasserstein", "--in", "t.hbt", "--mantissa", "2", "--block", "4"],
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["distance"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_then_landscape() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"epochs": 2, "hidden": [8, 8],
            "dataset": {"kind": "spirals", "train": 64, "val": 32},
            "numeric": {"mode": "hbfp", "mantissa_bits": 6, "block_size": 64}}"#,
    )
    .unwrap();
    let o = hbfp(dir.path(), &["train", "--config", "run.json", "--seeds", "3,4", "--out", "runs"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = dir.path().join("runs");
    for f in ["seed-3.report.json", "seed-4.curve.csv", "seed-4.ckpt", "summary.json", "manifest.json"] {
        assert!(runs.join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(runs.join("seed-3.curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "epoch,train_loss,train_acc,val_loss,val_acc,active_cfg");
    assert_eq!(curve.lines().count(), 3);

    let o = hbfp(
        dir.path(),
        &["analyze", "landscape", "--model", "runs/seed-3.ckpt", "--config", "run.json",
          "--mode", "grid", "--steps", "3", "--csv", "l.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let l = std::fs::read_to_string(dir.path().join("l.csv")).unwrap();
    assert_eq!(l.lines().count(), 10);
    let o = hbfp(
        dir.path(),
        &["analyze", "landscape", "--model", "runs/seed-3.ckpt", "--config", "run.json", "--steps", "4"],
    );
    assert_eq!(o.status.code(), Some(1));
}
