use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the directory that relative report paths resolve against.
pub const OUT_DIR_ENV: &str = "MALLIAVIN_OUT_DIR";

/// Column order of every row-table CSV file.
pub const CSV_COLUMNS: [&str; 9] = [
    "label",
    "method",
    "value",
    "reference",
    "abs_error",
    "rel_error",
    "std_error",
    "wall_time_ms",
    "params",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub method: String,
    /// The experiment config as run, seeds included.
    pub params: serde_json::Value,
    pub value: f64,
    pub reference: Option<f64>,
    /// Where the reference came from: `closed-form` or `moment-oracle`.
    pub reference_kind: Option<String>,
    pub abs_error: Option<f64>,
    pub rel_error: Option<f64>,
    pub std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl ReportRow {
    pub fn new(label: String, method: &str, params: serde_json::Value, value: f64) -> Self {
        ReportRow {
            label,
            method: method.to_string(),
            params,
            value,
            reference: None,
            reference_kind: None,
            abs_error: None,
            rel_error: None,
            std_error: None,
            wall_time_ms: None,
        }
    }

    pub fn with_reference(mut self, reference: f64, kind: &str) -> Self {
        let abs = (self.value - reference).abs();
        self.reference = Some(reference);
        self.reference_kind = Some(kind.to_string());
        self.abs_error = Some(abs);
        self.rel_error = Some(relative_error(self.value, reference));
        self
    }
}

/// `|value - reference| / max(1, |reference|)`.
pub fn relative_error(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1.0)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Rows as CSV text with the [`CSV_COLUMNS`] header.
pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.method.clone(),
            r.value.to_string(),
            opt(r.reference),
            opt(r.abs_error),
            opt(r.rel_error),
            opt(r.std_error),
            opt(r.wall_time_ms),
            serde_json::to_string(&r.params).expect("params serialize"),
        ])
        .map_err(io)?;
    }
    table_bytes(w)
}

/// Any header plus records as CSV text.
pub fn table_to_csv(header: &[&str], records: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for rec in records {
        w.write_record(rec).map_err(io)?;
    }
    table_bytes(w)
}

fn table_bytes(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error.to_string()))?;
    Ok(())
}

/// The JSON report path: `requested` resolved against `$MALLIAVIN_OUT_DIR` when relative,
/// or `$MALLIAVIN_OUT_DIR/<default_name>` when nothing was requested.
pub fn resolve_output(requested: Option<&str>, default_name: &str) -> Option<PathBuf> {
    let env_dir = std::env::var_os(OUT_DIR_ENV)
        .filter(|d| !d.is_empty())
        .map(PathBuf::from);
    match (requested, env_dir) {
        (Some(r), Some(dir)) if Path::new(r).is_relative() => Some(dir.join(r)),
        (Some(r), _) => Some(PathBuf::from(r)),
        (None, Some(dir)) => Some(dir.join(default_name)),
        (None, None) => None,
    }
}

/// `report.json` → `report.csv`, or `report.json` → `report_<suffix>.<ext>`.
pub fn sibling(path: &Path, suffix: Option<&str>, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let name = match suffix {
        Some(s) => format!("{stem}_{s}.{ext}"),
        None => format!("{stem}.{ext}"),
    };
    path.with_file_name(name)
}
