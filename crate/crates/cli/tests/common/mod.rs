#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn vcut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcut"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = vcut(args);
    assert!(
        out.status.success(),
        "vcut {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(args: &[&str]) -> i32 {
    vcut(args).status.code().expect("exited normally")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Validates `p` against `schemas/<name>.schema.json`.
pub fn assert_schema(name: &str, p: &Path) {
    let schema_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("schemas/{name}.schema.json"));
    let schema = read_json(&schema_path);
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let doc = read_json(p);
    let msgs: Vec<String> = match compiled.validate(&doc) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{} does not match {name}: {msgs:?}", p.display());
}

/// `init --preset tiny` into `dir/model`, returning (spec, weights).
pub fn tiny_model(dir: &Path) -> (PathBuf, PathBuf) {
    let m = dir.join("model");
    ok(&["--out", s(&m), "init", "--preset", "tiny", "--seed", "1"]);
    (m.join("spec.json"), m.join("weights"))
}
