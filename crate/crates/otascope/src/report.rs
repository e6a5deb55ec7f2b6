//! Serializes analysis results to files. Matrices go out as CSV, histograms
//! as CSV, and the full per-device and run-level documents as JSON. Column
//! order is fixed (keywords in corpus order, everything else lexicographic)
//! so reruns produce byte-identical files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    csv_escape, ClassCounts, DeviceReport, KeywordMatrix, RunSummary,
};
use std::collections::BTreeMap;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which serializations `write_reports` emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    /// Matrices and histogram as CSV; the structured documents stay JSON.
    #[default]
    Csv,
    /// Everything as JSON.
    Json,
    /// Both CSV and JSON for the tabular outputs.
    All,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        Some(match s {
            "csv" => ReportFormat::Csv,
            "json" => ReportFormat::Json,
            "all" => ReportFormat::All,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::All => "all",
        }
    }

    fn csv(&self) -> bool {
        matches!(self, ReportFormat::Csv | ReportFormat::All)
    }

    fn json(&self) -> bool {
        matches!(self, ReportFormat::Json | ReportFormat::All)
    }
}

/// Everything one `report` invocation needs serialized.
#[derive(Debug, Clone, Serialize)]
pub struct ReportSet {
    pub device_matrix: KeywordMatrix,
    pub event_matrix: KeywordMatrix,
    pub cipher_histogram: BTreeMap<String, ClassCounts>,
    pub device_reports: Vec<DeviceReport>,
    pub run_summary: RunSummary,
}

pub fn histogram_to_csv(histogram: &BTreeMap<String, ClassCounts>) -> String {
    let mut out = String::from("device,insecure,weak,secure,recommended,unknown,total\n");
    for (device, c) in histogram {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_escape(device),
            c.insecure,
            c.weak,
            c.secure,
            c.recommended,
            c.unknown,
            c.total()
        ));
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write(dir: &Path, name: &str, content: &str, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

/// Writes the report files into `dir` (created if missing) and returns the
/// paths written, in a fixed order. Default CSV format yields five files:
/// three CSV tables plus the two JSON documents.
pub fn write_reports(
    dir: &Path,
    set: &ReportSet,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir)
        .map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    if format.csv() {
        write(dir, "device_matrix.csv", &set.device_matrix.to_csv(), &mut written)?;
        write(dir, "event_matrix.csv", &set.event_matrix.to_csv(), &mut written)?;
        write(dir, "cipher_histogram.csv", &histogram_to_csv(&set.cipher_histogram), &mut written)?;
    }
    if format.json() {
        write(dir, "device_matrix.json", &to_json(&set.device_matrix)?, &mut written)?;
        write(dir, "event_matrix.json", &to_json(&set.event_matrix)?, &mut written)?;
        write(dir, "cipher_histogram.json", &to_json(&set.cipher_histogram)?, &mut written)?;
    }
    write(dir, "device_reports.json", &to_json(&set.device_reports)?, &mut written)?;
    write(dir, "run_summary.json", &to_json(&set.run_summary)?, &mut written)?;
    Ok(written)
}

/// Builds the full report set from a store snapshot.
pub fn build_reports(
    snap: &crate::analysis::StoreSnapshot,
    catalog: &crate::ciphers::CipherCatalog,
    keywords: &[String],
) -> ReportSet {
    let device_matrix = crate::analysis::build_device_matrix(snap, keywords);
    let event_matrix = crate::analysis::build_event_matrix(snap, keywords);
    let cipher_histogram = crate::analysis::cipher_histogram(snap, catalog);
    let device_reports = crate::analysis::device_reports(snap, catalog, keywords);
    let run_summary = crate::analysis::summarize_run(snap, &device_reports);
    ReportSet { device_matrix, event_matrix, cipher_histogram, device_reports, run_summary }
}
