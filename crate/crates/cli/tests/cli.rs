use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn unibasis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unibasis"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two rings of 20 nodes joined by a few bridges; class = ring.
fn write_inputs(dir: &Path) {
    let n = 40;
    let mut edges = String::new();
    for ring in 0..2 {
        for i in 0..20 {
            let (a, b) = (ring * 20 + i, ring * 20 + (i + 1) % 20);
            edges.push_str(&format!("{a} {b}\n"));
        }
    }
    for i in [0, 7, 13] {
        edges.push_str(&format!("{i} {}\n", 20 + i));
    }
    fs::write(dir.join("edges.txt"), edges).unwrap();
    let labels: String = (0..n).map(|i| format!("{}\n", i / 20)).collect();
    fs::write(dir.join("labels.txt"), labels).unwrap();
    let features: String = (0..n)
        .map(|i| {
            format!(
                "{:.3} {:.3} {}\n",
                (i as f64 * 0.3).sin(),
                (i as f64 * 0.11).cos(),
                i % 3
            )
        })
        .collect();
    fs::write(dir.join("features.txt"), features).unwrap();
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn estimate_build_train_spectrum_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_inputs(d);
    let (g, x, y) = (d.join("edges.txt"), d.join("features.txt"), d.join("labels.txt"));

    let est = unibasis(&["estimate-h", "--graph", path(&g), "--labels", path(&y), "--seed", "3"]);
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let est: Value = serde_json::from_slice(&est.stdout).unwrap();
    let ratio = est["ratio"].as_f64().unwrap();
    assert!(ratio > 0.8 && ratio <= 1.0, "{ratio}");

    let basis_dir = d.join("basis");
    let out = unibasis(&[
        "build-basis",
        "--graph",
        path(&g),
        "--features",
        path(&x),
        "--kind",
        "heterophily",
        "-K",
        "4",
        "--h-hat",
        "0.3",
        "--out",
        path(&basis_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&basis_dir.join("manifest.json"));
    assert_eq!(manifest["files"].as_array().unwrap().len(), 5);

    let run = d.join("run");
    let out = unibasis(&[
        "train",
        "--graph",
        path(&g),
        "--features",
        path(&x),
        "--labels",
        path(&y),
        "-K",
        "3",
        "--max-epochs",
        "60",
        "--seed",
        "1",
        "--out",
        path(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = json(&run.join("model.json"));
    assert_eq!(model["w"].as_array().unwrap().len(), 4);
    assert!(model.get("head_W").is_some());
    let config = json(&run.join("run_config.json"));
    assert!(config["h_hat"].is_f64(), "estimated h_hat is recorded");
    assert!(config.get("out").is_none());

    let spec = d.join("spec");
    let out = unibasis(&[
        "spectrum",
        "--config",
        path(&run.join("run_config.json")),
        "--checkpoint",
        path(&run.join("model.json")),
        "--out",
        path(&spec),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let profile = json(&spec.join("spectrum.json"));
    let points = profile.as_array().unwrap();
    assert_eq!(points.len(), 4);
    assert!(points.iter().all(|p| p["frequency"].is_f64() && p["weight"].is_f64()));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_inputs(d);
    let args = |out: &Path| {
        vec![
            "train".to_string(),
            "--graph".into(),
            path(&d.join("edges.txt")).into(),
            "--features".into(),
            path(&d.join("features.txt")).into(),
            "--labels".into(),
            path(&d.join("labels.txt")).into(),
            "--dropout".into(),
            "0.2".into(),
            "--max-epochs".into(),
            "40".into(),
            "--out".into(),
            path(out).into(),
        ]
    };
    let run = d.join("run");
    let first = Command::new(env!("CARGO_BIN_EXE_unibasis"))
        .args(args(&run))
        .output()
        .unwrap();
    assert!(first.status.success());
    let snapshot: Vec<Vec<u8>> = ["model.json", "report.json", "run_config.json"]
        .iter()
        .map(|f| fs::read(run.join(f)).unwrap())
        .collect();
    let second = Command::new(env!("CARGO_BIN_EXE_unibasis"))
        .args(args(&run))
        .output()
        .unwrap();
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    for (f, before) in ["model.json", "report.json", "run_config.json"].iter().zip(snapshot) {
        assert_eq!(fs::read(run.join(f)).unwrap(), before, "{f} changed");
    }
}

#[test]
fn synth_writes_dataset_at_target() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("synth");
    let run = unibasis(&[
        "synth",
        "--target-h",
        "0.5",
        "--feature-dim",
        "16",
        "--seed",
        "2",
        "--out",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest = json(&out.join("manifest.json"));
    let achieved = manifest["achieved_h"].as_f64().unwrap();
    assert!((achieved - 0.5).abs() <= 0.02, "{achieved}");
    for f in ["edges.txt", "labels.txt", "features.txt", "split.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn missing_input_file_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.txt");
    let out = unibasis(&["estimate-h", "--graph", path(&missing), "--labels", path(&missing)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    fs::write(tmp.path().join("labels.txt"), "0\nfoo\n").unwrap();
    let out = unibasis(&[
        "estimate-h",
        "--graph",
        path(&tmp.path().join("edges.txt")),
        "--labels",
        path(&tmp.path().join("labels.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn contract_violations_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_inputs(d);
    let (g, x) = (d.join("edges.txt"), d.join("features.txt"));
    // heterophily basis without any way to set its angle
    let out = unibasis(&[
        "build-basis",
        "--graph",
        path(&g),
        "--features",
        path(&x),
        "--kind",
        "het",
        "--out",
        path(&d.join("b")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = unibasis(&[
        "build-basis",
        "--graph",
        path(&g),
        "--features",
        path(&x),
        "--kind",
        "het",
        "--h-hat",
        "1.5",
        "--out",
        path(&d.join("b")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = unibasis(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}
