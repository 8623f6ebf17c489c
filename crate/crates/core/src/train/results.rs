use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluate::EvalReport;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_HEADER: &str = "dataset,task,protocol,run,f1_weighted,kappa,seed";

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Appends one row per run. A new file starts with a schema-version comment
/// and the column header; an existing file must carry the same version.
pub fn append_results(path: &Path, report: &EvalReport) -> Result<()> {
    let version_line = format!("# schema_version={RESULTS_SCHEMA_VERSION}");
    let fresh = !path.exists();
    if !fresh {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.lines().next() != Some(version_line.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "{} has a different results schema",
                path.display()
            )));
        }
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(&version_line);
        text.push('\n');
        text.push_str(RESULTS_HEADER);
        text.push('\n');
    }
    let p = &report.provenance;
    let task = p.task.as_deref().unwrap_or("none");
    for (run, (f1, k)) in report
        .f1_weighted
        .values
        .iter()
        .zip(&report.kappa.values)
        .enumerate()
    {
        text.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{}\n",
            p.dataset, task, report.protocol, run, f1, k, p.seed
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
