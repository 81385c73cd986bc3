use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// Run-dependent fields kept apart from the deterministic payload.
#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub generated_unix_ms: u128,
    pub threads: usize,
}

impl Meta {
    pub fn new(command: &'static str, threads: usize) -> Self {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        Meta {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            generated_unix_ms: now,
            threads,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON of `body` with a leading `meta` object.
pub fn json_report<T: Serialize>(meta: &Meta, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Envelope { meta, body }).expect("report serializes");
    s.push('\n');
    s
}

/// Header plus one record per row, comma-separated with LF endings.
pub fn csv_table<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    let bytes = w.into_inner().expect("in-memory writer");
    String::from_utf8(bytes).expect("csv is utf-8")
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(LabError::io(path))
}

/// Reads a numeric CSV with a header row into row-major values.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |detail: String| LabError::Input {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let cols = r.headers().map_err(|e| bad(e.to_string()))?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                bad(format!(
                    "row {} column {}: not a number: {field:?}",
                    i + 1,
                    j + 1
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("no data rows".into()));
    }
    Ok((rows, cols, data))
}
