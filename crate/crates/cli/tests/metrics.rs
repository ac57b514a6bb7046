mod common;

use std::path::{Path, PathBuf};

use common::*;
use vcut::numerics::{vten, Tensor};

fn put(dir: &Path, name: &str, dims: Vec<usize>, data: Vec<f64>) -> PathBuf {
    let p = dir.join(name);
    vten::write(&p, &Tensor::new(dims, data).unwrap()).unwrap();
    p
}

fn score(args: &[&str]) -> f64 {
    let text = ok(args);
    serde_json::from_str::<serde_json::Value>(&text).unwrap()["score"].as_f64().unwrap()
}

#[test]
fn consistency_and_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let same = put(d, "same.vten", vec![4, 3], [1.0, 2.0, 3.0].repeat(4));
    assert_eq!(score(&["metrics", "subject-consistency", "--in", s(&same)]), 1.0);
    assert_eq!(score(&["metrics", "bg-consistency", "--in", s(&same)]), 1.0);
    let r = put(d, "r.vten", vec![3], vec![2.0, 4.0, 6.0]);
    assert_eq!(score(&["metrics", "vi-subject", "--in", s(&same), "--ref", s(&r)]), 1.0);
    assert_eq!(code(&["metrics", "vi-bg", "--in", s(&same)]), 2);

    let a = put(d, "a.vten", vec![3], vec![1.0, -2.0, 0.5]);
    let b = put(d, "b.vten", vec![3], vec![-1.0, 2.0, -0.5]);
    assert!((score(&["metrics", "cosine", "--in", s(&a), "--ref", s(&b)]) + 1.0).abs() < 1e-15);
    let z = put(d, "z.vten", vec![3], vec![0.0; 3]);
    assert_eq!(code(&["metrics", "cosine", "--in", s(&a), "--ref", s(&z)]), 2);
}

#[test]
fn motion_smoothness_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let linear = put(d, "lin.vten", vec![3, 1, 1, 1], vec![0.0, 0.5, 1.0]);
    assert_eq!(score(&["metrics", "motion-smoothness", "--in", s(&linear)]), 1.0);
    let jump = put(d, "jump.vten", vec![3, 1, 1, 1], vec![0.0, 1.0, 0.0]);
    assert_eq!(score(&["metrics", "motion-smoothness", "--in", s(&jump)]), 0.0);
    let even = put(d, "even.vten", vec![4, 1, 1, 1], vec![0.0; 4]);
    assert_eq!(code(&["metrics", "motion-smoothness", "--in", s(&even)]), 2);
}

#[test]
fn dynamic_degree_from_flows_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let still = put(d, "still.vten", vec![2, 4, 4, 2], vec![0.0; 64]);
    let moving = put(d, "moving.vten", vec![2, 4, 4, 2], [6.0, 8.0].repeat(32));
    assert_eq!(score(&["metrics", "dynamic-degree", "--in", s(&still), s(&moving)]), 0.5);
    assert_eq!(score(&["metrics", "dynamic-degree", "--in", s(&moving), "--theta", "10"]), 0.0);

    // A bright square moving 2 px right per frame.
    let (t, h, w) = (3, 12, 12);
    let mut px = vec![0.0; t * h * w];
    for k in 0..t {
        for y in 4..8 {
            for x in 2 + 2 * k..6 + 2 * k {
                px[(k * h + y) * w + x] = 1.0;
            }
        }
    }
    let frames = put(d, "frames.vten", vec![t, h, w, 1], px);
    let out = d.join("o");
    let text = ok(&[
        "--out", s(&out), "metrics", "dynamic-degree", "--in", s(&frames), "--from-frames", "--block", "4",
        "--radius", "3", "--theta", "1.5",
    ]);
    assert!(text.contains("\"score\": 1.0"), "{text}");
    assert_schema("metric_report", &out.join("metric_dynamic-degree.json"));
    ok(&["--out", s(&out), "metrics", "subject-consistency", "--in", s(&frames)]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("metric,score,"));
}

#[test]
fn io_and_argument_failures() {
    assert_eq!(code(&["metrics", "subject-consistency", "--in", "/nonexistent.vten"]), 4);
    assert_eq!(code(&["metrics", "smoothness", "--in", "x.vten"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.vten");
    std::fs::write(&junk, b"not a tensor").unwrap();
    assert_eq!(code(&["metrics", "subject-consistency", "--in", s(&junk)]), 4);
}
