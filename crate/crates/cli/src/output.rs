//! CSV tables and JSON metadata sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// A cell of an output table.
#[derive(Clone, Debug)]
pub enum Cell {
    /// Floating-point value, written in shortest round-trip decimal form.
    Float(f64),
    /// Integer value.
    Int(i128),
    /// Text.
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Cell {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Cell {
        Cell::Int(x as i128)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Cell {
        Cell::Int(x as i128)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Cell {
        Cell::Int(x as i128)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Cell {
        Cell::Int(x as i128)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Cell {
        Cell::Int(x as i128)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Cell {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Cell {
        Cell::Text(x)
    }
}

/// A table with a fixed header.
#[derive(Debug)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    /// An empty table with columns `header`.
    pub fn new(header: &[&'static str]) -> Table {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; its length must match the header.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width differs from header"
        );
        self.rows.push(row);
    }

    /// Serializes to CSV. Fails on a non-finite number, naming its column.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            let mut record = Vec::with_capacity(row.len());
            for (cell, column) in row.iter().zip(&self.header) {
                record.push(match cell {
                    Cell::Float(x) if !x.is_finite() => {
                        bail!("column `{column}` has non-finite value {x}")
                    }
                    Cell::Float(x) => x.to_string(),
                    Cell::Int(i) => i.to_string(),
                    Cell::Text(s) => s.clone(),
                });
            }
            w.write_record(&record)?;
        }
        w.into_inner().context("flushing CSV")
    }
}

/// Metadata written next to every output file.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a, C: Serialize> {
    /// Subcommand.
    pub command: &'a str,
    /// Fully resolved configuration.
    pub config: &'a C,
    /// Package version.
    pub version: &'a str,
    /// Whether the build runs loops in parallel.
    pub parallel: bool,
    /// Requested worker count (`None`: machine parallelism).
    pub threads: Option<usize>,
    /// Wall-clock seconds spent in the computation.
    pub elapsed_seconds: f64,
}

/// Path of the sidecar for output `out`: same stem, extension `json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

/// Writes `bytes` to `out`, or to standard output when `out` is `None`.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Writes the sidecar of `out` as pretty JSON.
pub fn write_sidecar<C: Serialize>(out: &Path, sidecar: &Sidecar<'_, C>) -> Result<()> {
    let path = sidecar_path(out);
    let mut text = serde_json::to_string_pretty(sidecar)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip() {
        let mut t = Table::new(&["x", "n", "s"]);
        t.push(vec![0.1.into(), 3usize.into(), "a".into()]);
        t.push(vec![(80.0f64 / 81.0).into(), 0usize.into(), "b".into()]);
        let csv = String::from_utf8(t.to_csv().unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,n,s");
        assert_eq!(lines[1], "0.1,3,a");
        let x: f64 = lines[2].split(',').next().unwrap().parse().unwrap();
        assert_eq!(x, 80.0 / 81.0);
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut t = Table::new(&["ratio"]);
        t.push(vec![f64::NAN.into()]);
        let err = t.to_csv().unwrap_err().to_string();
        assert!(err.contains("ratio"));
    }
}
