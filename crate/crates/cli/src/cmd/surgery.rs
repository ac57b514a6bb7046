use std::path::Path;

use serde::Serialize;
use vcut::model::ModelSpec;
use vcut::surgery::{apply_vcut, SurgeryReport};
use vcut::{DType, Scalar};

use super::load_model;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, to_json, write_json};

#[derive(Serialize)]
struct Report<'a> {
    dtype: DType,
    source_spec: &'a ModelSpec,
    #[serde(flatten)]
    surgery: SurgeryReport,
}

/// Writes the transformed `spec.json`, `weights/` and `surgery_report.json`.
pub fn cmd<T: Scalar>(spec: ModelSpec, weights: Option<&Path>, init_seed: u64, out: &Path) -> CliResult<String> {
    let model = load_model::<T>(spec.clone(), weights, init_seed)?;
    let (cut, surgery) = apply_vcut(&model)?;
    ensure_dir(out)?;
    let spec_path = out.join("spec.json");
    cut.spec.save(&spec_path).map_err(|e| CliError::io(spec_path.display(), e))?;
    let dir = out.join("weights");
    cut.save_dir(&dir).map_err(|e| CliError::io(dir.display(), e))?;
    let report = Report {
        dtype: T::DTYPE,
        source_spec: &spec,
        surgery,
    };
    write_json(&out.join("surgery_report.json"), &report)?;
    to_json(&report)
}
