//! Trace tables and their CSV / JSONL renderings.
//!
//! Both encodings carry the same two layers: the fully resolved config (CSV:
//! leading `# section.key = value` lines; JSONL: a `{"config": {...}}` first
//! line) and one record per trace row. All rendering is deterministic —
//! floats print in shortest round-trip form — so a rerun of the same config
//! reproduces the file byte for byte.
//!
//! Non-finite values, which a dB column produces legitimately (a perfect
//! null is `-inf`), are spelled `-inf` / `inf` / `nan` in both encodings;
//! JSONL carries them as strings since JSON has no non-finite numbers.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde_json::{json, Map, Value as Json};

/// One cell of a trace row.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// Row counters and indices.
    Int(u64),
    /// Measurements; may be non-finite.
    Float(f64),
    /// Labels such as the protocol name.
    Text(String),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(f) => format_float(*f),
            Value::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Int(v) => json!(v),
            Value::Float(f) if f.is_finite() => json!(f),
            Value::Float(f) => json!(format_float(*f)),
            Value::Text(s) => json!(s),
        }
    }
}

/// A named-column table of trace rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    /// Column names, fixed per scenario kind.
    pub columns: Vec<&'static str>,
    /// Rows, each exactly `columns.len()` cells.
    pub rows: Vec<Vec<Value>>,
}

/// Renders a float in shortest round-trip form, spelling non-finite values
/// `-inf` / `inf` / `nan`.
pub fn format_float(f: f64) -> String {
    if f.is_nan() {
        "nan".to_string()
    } else if f == f64::INFINITY {
        "inf".to_string()
    } else if f == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{f}")
    }
}

/// Parses a float rendered by [`format_float`] (or a JSON number).
pub fn parse_float(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// Renders a table as CSV text: `# key = value` header lines, a column
/// line, then comma-joined rows. Cells never contain commas (labels are
/// bare words), so no quoting is needed.
pub fn to_csv(header: &[(String, String)], table: &TraceTable) -> String {
    let mut out = String::new();
    for (key, value) in header {
        writeln!(out, "# {key} = {value}").expect("string write");
    }
    writeln!(out, "{}", table.columns.join(",")).expect("string write");
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(Value::render).collect();
        writeln!(out, "{}", cells.join(",")).expect("string write");
    }
    out
}

/// Renders a table as JSONL text: a config object on the first line, then
/// one object per row keyed by column name.
pub fn to_jsonl(header: &[(String, String)], table: &TraceTable) -> String {
    let mut out = String::new();
    let config: Map<String, Json> = header
        .iter()
        .map(|(k, v)| (k.clone(), json!(v)))
        .collect();
    writeln!(out, "{}", json!({ "config": config })).expect("string write");
    for row in &table.rows {
        let record: Map<String, Json> = table
            .columns
            .iter()
            .zip(row)
            .map(|(col, cell)| (col.to_string(), cell.to_json()))
            .collect();
        writeln!(out, "{}", Json::Object(record)).expect("string write");
    }
    out
}

/// A trace read back from disk, cells as strings in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadTrace {
    /// Header `section.key` / value pairs.
    pub header: Vec<(String, String)>,
    /// Column names.
    pub columns: Vec<String>,
    /// Rows, cells rendered as strings.
    pub rows: Vec<Vec<String>>,
}

impl ReadTrace {
    /// Index of a column by name.
    pub fn col(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// A whole column parsed as floats; `None` if the column is missing or
    /// any cell fails to parse.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.col(name)?;
        self.rows
            .iter()
            .map(|row| parse_float(row.get(idx)?))
            .collect()
    }

    /// A header value by `section.key` name.
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Reads a trace file, auto-detecting the encoding from its first byte.
pub fn read_trace(path: &Path) -> io::Result<ReadTrace> {
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        parse_jsonl(&text)
    } else {
        parse_csv(&text)
    }
    .map_err(|msg| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {msg}", path.display())))
}

fn parse_csv(text: &str) -> Result<ReadTrace, String> {
    let mut header = Vec::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| format!("malformed header line `{line}`"))?;
            header.push((key.trim().to_string(), value.trim().to_string()));
        } else if columns.is_none() {
            columns = Some(line.split(',').map(str::to_string).collect());
        } else {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    Ok(ReadTrace {
        header,
        columns: columns.ok_or("no column line")?,
        rows,
    })
}

fn parse_jsonl(text: &str) -> Result<ReadTrace, String> {
    let mut lines = text.lines();
    let first = lines.next().ok_or("empty file")?;
    let config: Json = serde_json::from_str(first).map_err(|e| e.to_string())?;
    let config = config
        .get("config")
        .and_then(Json::as_object)
        .ok_or("first line is not a config object")?;
    let header: Vec<(String, String)> = config
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                v.as_str().map_or_else(|| v.to_string(), str::to_string),
            )
        })
        .collect();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in lines {
        let record: Json = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let record = record.as_object().ok_or("row line is not an object")?;
        let cols =
            columns.get_or_insert_with(|| record.keys().map(String::clone).collect::<Vec<_>>());
        let row = cols
            .iter()
            .map(|col| {
                let cell = record.get(col).ok_or_else(|| format!("row misses {col}"))?;
                Ok(match cell {
                    Json::String(s) => s.clone(),
                    other => other.to_string(),
                })
            })
            .collect::<Result<Vec<String>, String>>()?;
        rows.push(row);
    }
    Ok(ReadTrace {
        header,
        columns: columns.unwrap_or_default(),
        rows,
    })
}

/// Writes rendered trace text to disk.
pub fn write_file(path: &Path, text: &str) -> io::Result<()> {
    fs::write(path, text)
}
