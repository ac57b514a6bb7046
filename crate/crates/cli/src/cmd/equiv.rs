use std::path::Path;

use vcut::equiv::{run_suite, EquivOptions};
use vcut::Scalar;

use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, to_json, write_json};

/// Runs the equivalence suite. Failing checks become a property violation
/// listing each check's first failure; the report is written before that.
pub fn cmd<T: Scalar>(opts: &EquivOptions, out: Option<&Path>) -> CliResult<String> {
    if opts.configs == 0 {
        return Err(CliError::Argument("--seeds must be positive".into()));
    }
    let report = run_suite::<T>(opts)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("equiv_report.json"), &report)?;
    }
    let text = to_json(&report)?;
    let failures: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.first_failure.as_deref().unwrap_or("failed")))
        .collect();
    if failures.is_empty() {
        return Ok(text);
    }
    print!("{text}");
    Err(CliError::Violation(failures.join("; ")))
}
