//! Versioned tabular reports and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eopr_core::panel::format_value;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Version shared by every report schema written by this binary.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::JsonLines => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json-lines" | "jsonl" => Ok(Format::JsonLines),
            other => Err(format!("unknown format `{other}` (csv or json-lines)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(i64),
    Bool(bool),
    Empty,
}

impl Cell {
    pub fn opt(v: Option<f64>) -> Cell {
        v.map(Cell::Num).unwrap_or(Cell::Empty)
    }

    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => format_value(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Num(v) => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Cell::Int(v) => Value::from(*v),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Empty => Value::Null,
        }
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

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub schema: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: &'static str, columns: &[&'static str]) -> Self {
        Self {
            schema,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match {} columns", self.schema);
        self.rows.push(row);
    }

    /// CSV gets a `# eopr-schema:` comment line; JSON lines get a leading
    /// `{"schema", "version"}` object.
    pub fn render(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Csv => {
                let mut out = schema_line(self.schema).into_bytes();
                {
                    let mut w = csv::Writer::from_writer(&mut out);
                    w.write_record(&self.columns).expect("writing to memory");
                    for row in &self.rows {
                        w.write_record(row.iter().map(Cell::csv)).expect("writing to memory");
                    }
                    w.flush().expect("writing to memory");
                }
                out
            }
            Format::JsonLines => {
                let mut out = Vec::new();
                let header = serde_json::json!({ "schema": self.schema, "version": SCHEMA_VERSION });
                writeln!(out, "{header}").expect("writing to memory");
                for row in &self.rows {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.to_string(), v.json()))
                        .collect();
                    writeln!(out, "{}", Value::Object(obj)).expect("writing to memory");
                }
                out
            }
        }
    }
}

pub fn schema_line(schema: &str) -> String {
    format!("# eopr-schema: {schema} v{SCHEMA_VERSION}\n")
}

/// One file to be written into the output directory.
#[derive(Debug, Clone)]
pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Output {
    pub fn table(stem: &str, table: &Table, format: Format) -> Self {
        Self {
            name: format!("{stem}.{}", format.extension()),
            bytes: table.render(format),
        }
    }
}

/// Writes every output through a temporary sibling file and a rename, so
/// readers never observe a half-written file.
pub fn write_all(dir: &Path, outputs: &[Output]) -> Result<Vec<PathBuf>> {
    let wrap = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Write { path, source }
    };
    fs::create_dir_all(dir).map_err(wrap(dir))?;
    let mut written = Vec::with_capacity(outputs.len());
    for out in outputs {
        let target = dir.join(&out.name);
        let tmp = dir.join(format!(".{}.tmp{}", out.name, std::process::id()));
        let mut file = fs::File::create(&tmp).map_err(wrap(&tmp))?;
        file.write_all(&out.bytes).map_err(wrap(&tmp))?;
        file.sync_all().map_err(wrap(&tmp))?;
        drop(file);
        fs::rename(&tmp, &target).map_err(wrap(&target))?;
        written.push(target);
    }
    Ok(written)
}
