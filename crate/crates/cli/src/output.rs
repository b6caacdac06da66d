//! Tabular reports written as CSV or JSON.

use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::config::Format;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

/// A command result: a table plus run metadata.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: &'static str,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: Map<String, Value>,
}

impl Report {
    pub fn new(command: &'static str, columns: &[&str]) -> Self {
        Self {
            command,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata: Map::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: &str, value: impl serde::Serialize) {
        let v = serde_json::to_value(value).expect("metadata is serializable");
        self.metadata.insert(key.to_owned(), v);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> CliResult<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns).map_err(csv_io)?;
        for row in &self.rows {
            out.write_record(row.iter().map(Cell::csv)).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    fn metadata_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), Value::from(self.command));
        m.extend(self.metadata.clone());
        Value::Object(m)
    }

    pub fn to_json(&self) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|row| Value::Object(self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect()))
            .collect();
        let mut top = Map::new();
        top.insert("metadata".into(), self.metadata_value());
        top.insert("columns".into(), Value::from(self.columns.clone()));
        top.insert("rows".into(), Value::Array(rows));
        Value::Object(top)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> CliResult<()> {
        serde_json::to_writer_pretty(&mut w, &self.to_json()).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    }

    /// Writes the report to `path`, or stdout when absent. CSV files get
    /// a `<path>.meta.json` sidecar carrying the metadata.
    pub fn emit(&self, format: Format, path: Option<&Path>) -> CliResult<()> {
        match path {
            None => {
                let stdout = std::io::stdout();
                let lock = stdout.lock();
                match format {
                    Format::Csv => self.write_csv(lock),
                    Format::Json => self.write_json(lock),
                }
            }
            Some(p) => {
                let file = std::io::BufWriter::new(std::fs::File::create(p)?);
                match format {
                    Format::Csv => {
                        self.write_csv(file)?;
                        let mut side = p.as_os_str().to_owned();
                        side.push(".meta.json");
                        let mut f = std::io::BufWriter::new(std::fs::File::create(side)?);
                        serde_json::to_writer_pretty(&mut f, &self.metadata_value()).map_err(std::io::Error::from)?;
                        writeln!(f)?;
                        f.flush()?;
                        Ok(())
                    }
                    Format::Json => self.write_json(file),
                }
            }
        }
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}
