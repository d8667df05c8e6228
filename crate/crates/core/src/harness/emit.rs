//! Report serialization: full-structure JSON and a tidy long-format CSV with
//! one row per (cell, metric).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::ExperimentReport;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["tau_true", "epsilon", "m", "metric", "value"];
pub const JSON_FILE: &str = "report.json";
pub const CSV_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmitFormat {
    Csv,
    Json,
    #[default]
    Both,
}

/// 17 significant digits in scientific notation; `Display` for f64 never
/// consults the locale.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn to_json_string(report: &ExperimentReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Config(format!("serializing report: {e}")))
}

pub fn from_json_str(text: &str) -> Result<ExperimentReport> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("parsing report: {e}")))
}

pub fn to_csv_string(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Config(format!("writing CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for sweep in &report.sweeps {
        for cell in &sweep.cells {
            let (tau, eps, m) = (format_opt(cell.tau_true), format_float(cell.epsilon), cell.m.to_string());
            for (metric, value) in cell.metrics() {
                w.write_record([tau.as_str(), eps.as_str(), m.as_str(), metric.as_str(), &format_opt(value)])
                    .map_err(to_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("writing CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the report into `out_dir`, returning the files written.
pub fn emit(report: &ExperimentReport, format: EmitFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if matches!(format, EmitFormat::Json | EmitFormat::Both) {
        let path = out_dir.join(JSON_FILE);
        write(&path, &to_json_string(report)?)?;
        written.push(path);
    }
    if matches!(format, EmitFormat::Csv | EmitFormat::Both) {
        let path = out_dir.join(CSV_FILE);
        write(&path, &to_csv_string(report)?)?;
        written.push(path);
    }
    Ok(written)
}
