mod common;

use common::*;
use vcut::model::ModelSpec;
use vcut::numerics::vten;

#[test]
fn surgery_writes_spec_weights_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, weights) = tiny_model(dir.path());
    let out = dir.path().join("cut");
    ok(&["--out", s(&out), "surgery", "--spec", s(&spec), "--weights", s(&weights)]);
    let report_path = out.join("surgery_report.json");
    assert_schema("surgery_report", &report_path);
    let r = read_json(&report_path);
    let tiny = ModelSpec::tiny();
    assert_eq!(r["sites_removed"].as_array().unwrap().len(), tiny.site_layout(vcut::model::AttentionKind::Tca).total());
    assert_eq!(
        r["params_before"].as_u64().unwrap() - r["params_after"].as_u64().unwrap(),
        r["param_delta"].as_u64().unwrap()
    );
    assert!(ModelSpec::load(out.join("spec.json")).unwrap().vcut);
    assert!(out.join("weights/manifest.json").exists());

    // Surgery twice is refused, baseline sampling on cut weights too.
    let again = dir.path().join("again");
    let cut_spec = out.join("spec.json");
    let cut_weights = out.join("weights");
    assert_eq!(code(&["--out", s(&again), "surgery", "--spec", s(&cut_spec), "--weights", s(&cut_weights)]), 2);
    let run = dir.path().join("run");
    assert_eq!(
        code(&["--out", s(&run), "run", "--spec", s(&cut_spec), "--weights", s(&cut_weights), "--mode", "baseline", "--steps", "2"]),
        2
    );
}

#[test]
fn run_writes_trajectory_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, weights) = tiny_model(dir.path());
    let a = dir.path().join("a");
    ok(&["--out", s(&a), "run", "--spec", s(&spec), "--weights", s(&weights), "--mode", "vcut", "--save-eps"]);
    assert_schema("run_stats", &a.join("run_stats.json"));
    let r = read_json(&a.join("run_stats.json"));
    assert_eq!(r["stats"]["forward_passes"], 41);
    assert_eq!(r["stats"]["cache_builds"], 1);
    assert_eq!(r["config"]["cut_step"], 17);
    assert_eq!(std::fs::read_dir(a.join("states")).unwrap().count(), 26);
    assert_eq!(std::fs::read_dir(a.join("eps")).unwrap().count(), 25);
    let z0 = vten::read::<f32>(a.join("states/z_000.vten")).unwrap();
    assert_eq!(z0.dims(), [1, 4, 3, 4, 4]);

    // Recomputing the cache every step changes nothing.
    let b = dir.path().join("b");
    ok(&[
        "--out", s(&b), "run", "--spec", s(&spec), "--weights", s(&weights), "--mode", "vcut",
        "--cache-policy", "recompute-every-step",
    ]);
    let rb = read_json(&b.join("run_stats.json"));
    assert_eq!(rb["stats"]["cache_builds"], 25);
    assert_eq!(r["trajectory_digest"], rb["trajectory_digest"]);

    // A supplied embedding file replaces the seeded one.
    let e = dir.path().join("e.vten");
    vten::write(&e, &vcut::numerics::Tensor::<f32>::from_fn(vec![16], |i| i as f32 / 16.0).unwrap()).unwrap();
    let c = dir.path().join("c");
    ok(&["--out", s(&c), "run", "--spec", s(&spec), "--weights", s(&weights), "--embedding", s(&e), "--steps", "3"]);
    assert_ne!(read_json(&c.join("run_stats.json"))["final_digest"], r["final_digest"]);
}

#[test]
fn baseline_never_cuts_by_default_and_f64_works() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    ok(&["--dtype", "f64", "--out", s(&out), "init", "--preset", "tiny"]);
    let run = dir.path().join("r");
    ok(&[
        "--dtype", "f64", "--out", s(&run), "run", "--spec", s(&out.join("spec.json")),
        "--weights", s(&out.join("weights")), "--mode", "baseline", "--steps", "4",
    ]);
    let r = read_json(&run.join("run_stats.json"));
    assert_eq!(r["dtype"], "f64");
    assert_eq!(r["stats"]["forward_passes"], 8);
    assert_eq!(r["surgery_applied"], false);
    // f32 weights cannot be read as f64.
    let f32m = dir.path().join("m32");
    ok(&["--out", s(&f32m), "init", "--preset", "tiny"]);
    let bad = dir.path().join("bad");
    assert_ne!(
        code(&[
            "--dtype", "f64", "--out", s(&bad), "run", "--spec", s(&f32m.join("spec.json")),
            "--weights", s(&f32m.join("weights")), "--steps", "2",
        ]),
        0
    );
}

#[test]
fn argument_and_io_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, weights) = tiny_model(dir.path());
    let out = dir.path().join("x");
    assert_eq!(code(&["--out", s(&out), "run", "--spec", s(&spec), "--weights", s(&weights), "--cut-step", "40"]), 2);
    assert_eq!(code(&["--out", s(&out), "run", "--spec", s(&spec), "--mode", "sideways"]), 2);
    assert_eq!(code(&["--out", s(&out), "run", "--spec", "/nonexistent/spec.json"]), 4);
    assert_eq!(code(&["run", "--spec", s(&spec)]), 2);
    assert_eq!(code(&["--out", s(&out), "run", "--spec", s(&spec), "--weights", "/nonexistent/w"]), 4);
}
