use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dannlab::dann::load_checkpoint;
use dannlab::data::{make_synthetic_dataset, write_idx_images, write_image_dir, LabeledDataset};
use dannlab::harness::SweepResult;
use dannlab::numcore::Tensor;
use dannlab::report::parse_grid_csv;

fn dannlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dannlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dannlab(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = dannlab(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "train": {"source": {"kind": "synthetic", "count": 96, "shape": [12, 12, 1], "classes": 2, "seed": 1}, "count": 64},
  "test": {"source": {"kind": "synthetic", "count": 96, "shape": [12, 12, 1], "classes": 2, "seed": 1}, "offset": 64},
  "da": {"source": {"kind": "synthetic", "count": 32, "shape": [12, 12, 1], "classes": 2, "seed": 2}},
  "shift": "noise",
  "test_grid": [0.0],
  "da_grid": [0.0],
  "replicates": 1,
  "training": {"epochs": 1, "batch_size": 16},
  "model": {"conv1_channels": 3, "conv2_channels": 4, "kernel": 3, "pool": 2, "label_hidden": [8], "domain_hidden": [8]}
}"#;

fn tiny_config(dir: &Path, test_grid: &str) -> String {
    let path = dir.join("tiny.json");
    fs::write(&path, TINY.replace(r#""test_grid": [0.0]"#, &format!(r#""test_grid": {test_grid}"#))).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn zero_noise_shift_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_synthetic_dataset(20, [8, 8, 1], 3, 4).unwrap();
    let input = dir.path().join("in.idx");
    let output = dir.path().join("out.idx");
    write_idx_images(&input, ds.images()).unwrap();
    let stdout = ok(&["shift", "--input", s(&input), "--output", s(&output), "--noise", "0"]);
    assert!(stdout.contains("before") && stdout.contains("after"));
    assert_eq!(fs::read(&input).unwrap(), fs::read(&output).unwrap());
}

#[test]
fn blur_of_constant_directory_is_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let images = vec![Tensor::full(vec![9, 9, 1], 0.4); 3];
    let ds = LabeledDataset::new(images, vec![0, 1, 2], "flat").unwrap();
    let input = dir.path().join("in");
    let output = dir.path().join("out");
    write_image_dir(&ds, &input).unwrap();
    ok(&["shift", "--input", s(&input), "--out", s(&output), "--blur", "3"]);
    for name in ["img_00000.pgm", "img_00001.pgm", "img_00002.pgm", "manifest.csv"] {
        assert_eq!(fs::read(input.join(name)).unwrap(), fs::read(output.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn color_shift_needs_rgb_input() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_synthetic_dataset(4, [8, 8, 1], 2, 1).unwrap();
    let input = dir.path().join("gray");
    write_image_dir(&ds, &input).unwrap();
    let target = dir.path().join("target.ppm");
    let rgb = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
    dannlab::data::write_pnm(&target, &rgb).unwrap();
    let err = fails(&[
        "shift",
        "--input",
        s(&input),
        "--output",
        s(&dir.path().join("out")),
        "--colorshift",
        s(&target),
    ]);
    assert!(err.contains("channel"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn shift_needs_exactly_one_kind() {
    let err = fails(&["shift", "--input", "x", "--output", "y", "--noise", "0.1", "--blur", "3"]);
    assert!(err.contains("cannot be used with"), "{err}");
}

#[test]
fn one_by_one_sweep_has_zero_gain_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[0.0]");
    let out = dir.path().join("run");
    let stdout = ok(&["--config", &cfg, "--out", s(&out), "sweep"]);
    assert!(stdout.contains("max gain"), "{stdout}");
    let result = SweepResult::load(out.join("result.json")).unwrap();
    assert_eq!(result.decomposition.gain, vec![vec![0.0]]);
    assert!(!out.join("result.partial.json").exists());

    let report = dir.path().join("report");
    ok(&["--out", s(&report), "report", s(&out.join("result.json"))]);
    let (rows, cols, grid) = parse_grid_csv(&fs::read_to_string(report.join("gain.csv")).unwrap()).unwrap();
    assert_eq!((rows, cols, grid), (vec![0.0], vec![0.0], vec![vec![0.0]]));
    let svg = fs::read_to_string(report.join("gain_heatmap.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="cell""#).count(), 1);
    assert!(svg.contains(r##"fill="#f7fbff""##));
    for f in ["degradation.csv", "cost.csv", "accuracy.csv", "accuracy_heatmap.svg", "fits.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[0.0, 0.8]");
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&["--config", &cfg, "--seed", seed, "--out", s(&out), "--threads", "1", "sweep"]);
        fs::read(out.join("result.json")).unwrap()
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
}

#[test]
fn train_writes_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[0.0, 0.5]");
    let out = dir.path().join("model");
    let stdout = ok(&["--config", &cfg, "--out", s(&out), "train", "--da-shift", "0.5", "--lambda", "0.3"]);
    assert!(stdout.contains("domain acc"), "{stdout}");
    assert!(stdout.contains("test shift 0.5"), "{stdout}");
    let model = load_checkpoint(out.join("model.ckpt")).unwrap();
    assert_eq!(model.lambda(), 0.3);
    assert!(out.join("train_log.json").exists());
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"shift\": \"noise\",\n  \"seed\": 1,,\n}").unwrap();
    let err = fails(&["--config", s(&path), "sweep"]);
    assert!(err.contains("line 3 column"), "{err}");
    assert_eq!(err.matches("line 3").count(), 1, "{err}");
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[]");
    let err = fails(&["--config", &cfg, "--out", s(dir.path()), "sweep", "--epochs", "0"]);
    assert!(err.contains("test_grid") && err.contains("epochs"), "{err}");
}

#[test]
fn report_of_missing_result_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&["--out", s(dir.path()), "report", s(&dir.path().join("nope.json"))]);
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn sweep_without_config_fails() {
    let err = fails(&["sweep"]);
    assert!(err.contains("--config"), "{err}");
}
