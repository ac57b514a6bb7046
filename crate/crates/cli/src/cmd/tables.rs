use std::path::Path;

use serde::Serialize;
use vcut::costmodel::published::{per_step_rows, totals_rows};
use vcut::costmodel::MacConvention;

use crate::error::CliResult;
use crate::io::{ensure_dir, write_csv, write_json};

fn csv_text<S: Serialize>(rows: &[S]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-step and per-video cost tables next to the published figures. With
/// `out`, also writes `per_step_costs.csv`, `run_totals.csv` and `cost_tables.json`.
pub fn cmd(convention: MacConvention, out: Option<&Path>) -> CliResult<String> {
    let per_step = per_step_rows(convention)?;
    let totals = totals_rows()?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_csv(&dir.join("per_step_costs.csv"), &per_step)?;
        write_csv(&dir.join("run_totals.csv"), &totals)?;
        #[derive(Serialize)]
        struct Both<'a, A, B> {
            convention: MacConvention,
            per_step: &'a [A],
            totals: &'a [B],
        }
        write_json(
            &dir.join("cost_tables.json"),
            &Both {
                convention,
                per_step: &per_step,
                totals: &totals,
            },
        )?;
    }
    Ok(format!("{}\n{}", csv_text(&per_step)?, csv_text(&totals)?))
}
