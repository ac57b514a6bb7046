mod common;

use common::*;

#[test]
fn cost_report_and_appended_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let text = ok(&["--out", s(&out), "cost", "--frames", "14", "--baseline-latency", "68.4"]);
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_schema("cost_report", &out.join("cost_report.json"));
    assert_eq!(report["baseline"]["params"], 1_524_623_082u64);
    ok(&["--out", s(&out), "cost", "--frames", "25", "--cut-step", "20"]);
    let mut rdr = csv::Reader::from_path(out.join("cost.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    for h in ["method", "macs_T", "params_B", "latency_s", "delta_macs_T", "delta_params_M"] {
        assert!(headers.iter().any(|x| x == h), "missing column {h}");
    }
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[0][0], "baseline");
    assert_eq!(&rows[3][0], "vcut");
}

#[test]
fn no_cut_equals_baseline_total() {
    let text = ok(&["cost", "--cut-step", "26", "--arch", concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/svd_arch.json")]);
    let r: serde_json::Value = serde_json::from_str(&text).unwrap();
    let base = r["baseline"]["macs_per_step"].as_f64().unwrap() * 25.0;
    assert_eq!(r["baseline"]["macs_total"].as_f64().unwrap(), base);
}

#[test]
fn measure_reports_toy_timings() {
    let text = ok(&["cost", "--steps", "4", "--cut-step", "3", "--measure"]);
    let r: serde_json::Value = serde_json::from_str(&text).unwrap();
    let m = &r["measured"];
    assert!(m["baseline_s"].as_f64().unwrap() > 0.0);
    let modeled = m["modeled_ratio"].as_f64().unwrap();
    assert!(modeled > 0.0 && modeled < 1.0);
}

#[test]
fn bad_inputs() {
    assert_eq!(code(&["cost", "--frames", "0"]), 2);
    assert_eq!(code(&["cost", "--convention", "flops"]), 2);
    assert_eq!(code(&["cost", "--arch", "/nonexistent.json"]), 4);
}

fn column(rows: &[csv::StringRecord], headers: &csv::StringRecord, name: &str) -> Vec<String> {
    let i = headers.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].to_string()).collect()
}

#[test]
fn cost_tables_side_by_side() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    ok(&["--out", s(&out), "cost-tables"]);
    let mut rdr = csv::Reader::from_path(out.join("per_step_costs.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let model = column(&rows, &h, "model");
    let variant = column(&rows, &h, "variant");
    let delta = column(&rows, &h, "macs_delta_t");
    let i = (0..rows.len()).find(|&i| model[i] == "SVD" && variant[i] == "tca-removed").unwrap();
    let d: f64 = delta[i].parse().unwrap();
    assert!((d - 1.01).abs() / 1.01 <= 0.15, "{d}");

    let mut rdr = csv::Reader::from_path(out.join("run_totals.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let model = column(&rows, &h, "model");
    let cut = column(&rows, &h, "cut_step");
    let total = column(&rows, &h, "total_t");
    let per = column(&rows, &h, "per_step_t");
    let i = (0..rows.len()).find(|&i| model[i] == "SVD-XT" && cut[i] == "17").unwrap();
    assert!((total[i].parse::<f64>().unwrap() - 1288.0).abs() <= 1.0);
    for i in (0..rows.len()).filter(|&i| cut[i] == "26") {
        assert_eq!(total[i].parse::<f64>().unwrap(), 25.0 * per[i].parse::<f64>().unwrap());
    }
    assert!(out.join("cost_tables.json").exists());
}
