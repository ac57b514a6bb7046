use std::path::{Path, PathBuf};

use serde::Serialize;
use vcut::model::{Model, ModelSpec};
use vcut::Scalar;

use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, write_json};

#[derive(Serialize)]
struct InitReport {
    spec: PathBuf,
    weights: PathBuf,
    seed: u64,
    params: usize,
}

pub fn preset(name: &str) -> CliResult<ModelSpec> {
    match name {
        "tiny" => Ok(ModelSpec::tiny()),
        "toy-svd" => Ok(ModelSpec::toy_svd()),
        other => Err(CliError::Argument(format!("unknown preset {other:?} (tiny, toy-svd)"))),
    }
}

/// Writes `spec.json` and `weights/` for a seeded model under `out`.
pub fn cmd<T: Scalar>(spec: ModelSpec, seed: u64, out: &Path) -> CliResult<String> {
    let model = Model::<T>::init(spec, seed)?;
    ensure_dir(out)?;
    let spec_path = out.join("spec.json");
    let weights = out.join("weights");
    model
        .spec
        .save(&spec_path)
        .map_err(|e| CliError::io(spec_path.display(), e))?;
    model.save_dir(&weights).map_err(|e| CliError::io(weights.display(), e))?;
    let report = InitReport {
        spec: spec_path,
        weights,
        seed,
        params: model.num_params(),
    };
    write_json(&out.join("init_report.json"), &report)?;
    crate::io::to_json(&report)
}
