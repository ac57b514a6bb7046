mod common;

use common::*;

fn plan(dir: &std::path::Path, spec: &std::path::Path, weights: &std::path::Path, seeds: &str) -> std::path::PathBuf {
    let p = dir.join("plan.json");
    std::fs::write(
        &p,
        format!(
            r#"{{"spec": {:?}, "weights": {:?}, "modes": ["baseline", "vcut"], "cut_steps": [17], "seeds": {seeds}, "steps": 25, "baseline_latency": 10.0}}"#,
            s(spec),
            s(weights)
        ),
    )
    .unwrap();
    p
}

#[test]
fn plan_gives_one_row_per_run_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, weights) = tiny_model(dir.path());
    let p = plan(dir.path(), &spec, &weights, "[0, 1, 2]");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--threads", "2", "--out", s(&a), "sweep", "--plan", s(&p)]);
    ok(&["--threads", "1", "--out", s(&b), "sweep", "--plan", s(&p)]);
    let csv_a = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("sweep.json")).unwrap(), std::fs::read(b.join("sweep.json")).unwrap());
    assert_schema("sweep_report", &a.join("sweep.json"));

    let mut rdr = csv::Reader::from_reader(csv_a.as_slice());
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(&r[col("status")], "ok");
        let (passes, cut) = match &r[col("mode")] {
            "baseline" => ("50", "26"),
            "vcut" => ("41", "17"),
            m => panic!("unexpected mode {m}"),
        };
        assert_eq!(&r[col("forward_passes")], passes);
        assert_eq!(&r[col("cut_step")], cut);
    }
    // Seeds are shared across modes; different seeds give different trajectories.
    assert_eq!(&rows[0][col("seed")], &rows[3][col("seed")]);
    assert_ne!(&rows[0][col("final_digest")], &rows[1][col("final_digest")]);
    let rel: f64 = rows[3][col("latency_rel")].parse().unwrap();
    assert!(rel > 0.0 && rel < 1.0);
    let secs: f64 = rows[3][col("latency_s")].parse().unwrap();
    assert!((secs - 10.0 * rel).abs() < 1e-12);
}

#[test]
fn empty_seed_list_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, weights) = tiny_model(dir.path());
    let p = plan(dir.path(), &spec, &weights, "[]");
    assert_eq!(code(&["--out", s(&dir.path().join("o")), "sweep", "--plan", s(&p)]), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"modes": ["vcut"], "seeds": [0], "colour": 1}"#).unwrap();
    assert_eq!(code(&["--out", s(&dir.path().join("o")), "sweep", "--plan", s(&bad)]), 2);
}

#[test]
fn failed_rows_are_recorded_and_the_rest_still_run() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, weights) = tiny_model(dir.path());
    let cut = dir.path().join("cut");
    ok(&["--out", s(&cut), "surgery", "--spec", s(&spec), "--weights", s(&weights)]);
    let out = dir.path().join("o");
    let cut_spec = cut.join("spec.json");
    let cut_weights = cut.join("weights");
    ok(&[
        "--out", s(&out), "sweep", "--spec", s(&cut_spec), "--weights", s(&cut_weights),
        "--modes", "baseline,vcut", "--seeds", "4", "--steps", "3", "--cut-steps", "2",
    ]);
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("baseline-c4-s4,") && lines[1].contains(",error,"));
    assert!(lines[2].starts_with("vcut-c2-s4,") && lines[2].contains(",ok,"));
}
