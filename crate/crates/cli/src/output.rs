//! Output records and their CSV / JSON encodings.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: &str = "extprof/1";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("non-finite value in {field}")]
    NonFinite { field: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row} has {got} cells, header has {want}")]
    Ragged { row: usize, got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    fn csv_text(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn parse(s: &str) -> Cell {
        match s.parse::<f64>() {
            Ok(x) => Cell::Num(x),
            Err(_) => Cell::Text(s.to_string()),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputRecord {
    pub schema_version: &'static str,
    pub config: RunConfig,
    pub table: Table,
    pub summary: BTreeMap<String, Cell>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl OutputRecord {
    pub fn new(config: RunConfig) -> Self {
        OutputRecord {
            schema_version: SCHEMA_VERSION,
            config,
            table: Table::default(),
            summary: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn summary(&mut self, key: &str, value: impl Into<Cell>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn diagnostic(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }

    /// First non-finite number anywhere in the record.
    pub fn check_finite(&self) -> Result<(), OutputError> {
        let bad = |field: String| Err(OutputError::NonFinite { field });
        for (i, row) in self.table.rows.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if let Cell::Num(x) = c {
                    if !x.is_finite() {
                        return bad(format!("table[{i}].{}", self.table.columns.get(j).map_or("?", |s| s)));
                    }
                }
            }
        }
        for (k, c) in &self.summary {
            if matches!(c, Cell::Num(x) if !x.is_finite()) {
                return bad(format!("summary.{k}"));
            }
        }
        for (k, x) in &self.diagnostics {
            if !x.is_finite() {
                return bad(format!("diagnostics.{k}"));
            }
        }
        self.config.check_finite().map_err(|f| OutputError::NonFinite { field: format!("config.{f}") })
    }
}

/// RFC-4180 text of a table: header row, then one line per row.
pub fn table_to_csv(table: &Table) -> Result<String, OutputError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    w.write_record(&table.columns)?;
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.columns.len() {
            return Err(OutputError::Ragged { row: i, got: row.len(), want: table.columns.len() });
        }
        for c in row {
            if let Cell::Num(x) = c {
                if !x.is_finite() {
                    return Err(OutputError::NonFinite { field: format!("table[{i}]") });
                }
            }
        }
        w.write_record(row.iter().map(Cell::csv_text))?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error()).map_err(|e| OutputError::Io {
        path: PathBuf::from("<buffer>"),
        source: e,
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parse CSV produced by [`table_to_csv`].
pub fn parse_csv(text: &str) -> Result<Table, OutputError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut table = Table { columns, rows: Vec::new() };
    for rec in r.records() {
        table.rows.push(rec?.iter().map(Cell::parse).collect());
    }
    Ok(table)
}

pub fn record_to_json(record: &OutputRecord) -> Result<String, OutputError> {
    record.check_finite()?;
    let mut s = serde_json::to_string_pretty(record)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, text: &str) -> Result<(), OutputError> {
    let io = |source| OutputError::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)?;
    Ok(())
}

/// Path of the metadata file written next to a CSV file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Write the table to `path` and the rest of the record to [`sidecar_path`].
/// Nothing is written when the record holds a non-finite number.
pub fn emit_csv(record: &OutputRecord, path: &Path) -> Result<(), OutputError> {
    record.check_finite()?;
    let body = table_to_csv(&record.table)?;
    let meta = OutputRecord { table: Table { columns: record.table.columns.clone(), rows: Vec::new() }, ..record.clone() };
    let meta = record_to_json(&meta)?;
    write_file(path, &body)?;
    write_file(&sidecar_path(path), &meta)
}

/// Write the record as one JSON object. Nothing is written on a non-finite number.
pub fn emit_json(record: &OutputRecord, path: &Path) -> Result<(), OutputError> {
    let text = record_to_json(record)?;
    write_file(path, &text)
}
