//! Row-oriented output in CSV or JSON, written incrementally.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

/// Seventeen significant digits, enough to round-trip any double.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) => format_real(*x),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            Cell::Real(x) if x.is_finite() => Value::from(*x),
            Cell::Real(x) => Value::from(format_real(*x)),
            Cell::Bool(b) => Value::from(*b),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

enum Inner {
    Csv(Box<csv::Writer<Box<dyn Write>>>),
    Json { out: Box<dyn Write>, rows: usize },
}

/// Destination for one table.
pub struct Sink {
    columns: Vec<&'static str>,
    inner: Inner,
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Opens `path`, or stdout when absent.
pub fn open(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                CliError::Io(format!("cannot create {}: {e}", p.display()))
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

impl Sink {
    pub fn new(
        out: Box<dyn Write>,
        format: Format,
        columns: Vec<&'static str>,
    ) -> Result<Self, CliError> {
        let inner = match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&columns).map_err(io_err)?;
                Inner::Csv(Box::new(w))
            }
            Format::Json => {
                let mut out = out;
                out.write_all(b"[").map_err(io_err)?;
                Inner::Json { out, rows: 0 }
            }
        };
        Ok(Self { columns, inner })
    }

    pub fn row(&mut self, cells: Vec<Cell>) -> Result<(), CliError> {
        debug_assert_eq!(cells.len(), self.columns.len());
        match &mut self.inner {
            Inner::Csv(w) => w.write_record(cells.iter().map(Cell::csv)).map_err(io_err),
            Inner::Json { out, rows } => {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(&cells)
                    .map(|(c, v)| (c.to_string(), v.json()))
                    .collect();
                if *rows > 0 {
                    out.write_all(b",").map_err(io_err)?;
                }
                out.write_all(b"\n").map_err(io_err)?;
                serde_json::to_writer(&mut *out, &obj).map_err(io_err)?;
                *rows += 1;
                Ok(())
            }
        }
    }

    pub fn finish(self) -> Result<(), CliError> {
        match self.inner {
            Inner::Csv(mut w) => w.flush().map_err(io_err),
            Inner::Json { mut out, .. } => {
                out.write_all(b"\n]\n").map_err(io_err)?;
                out.flush().map_err(io_err)
            }
        }
    }
}

/// Writes one pretty-printed JSON document.
pub fn write_json<T: serde::Serialize>(mut out: Box<dyn Write>, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut out, value).map_err(io_err)?;
    out.write_all(b"\n").map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// Colon-joined integer key, e.g. a lineage count vector.
pub fn key<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(":")
}

/// Semicolon-joined weights at full precision.
pub fn real_key(v: &[f64]) -> String {
    v.iter()
        .map(|x| format_real(*x))
        .collect::<Vec<_>>()
        .join(";")
}
