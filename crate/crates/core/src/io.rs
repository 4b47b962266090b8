//! CSV matrices and JSON reports.
//!
//! Matrices are CSV with a header row; every value is written with 17
//! significant digits so a write-then-read round trip is exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{KnockoffError, Result};
use crate::FeatureMatrix;

pub const FORMAT_VERSION: u32 = 1;

/// Crate version plus the commit it was built from.
pub fn build_id() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("KNOCKOFFS_GIT_REV"))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| KnockoffError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| KnockoffError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parses a headed numeric CSV; `source` names the input in error messages.
pub fn parse_matrix_csv<R: Read>(reader: R, source: &str) -> Result<(Vec<String>, FeatureMatrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| KnockoffError::Parse(format!("{source}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(KnockoffError::Parse(format!("{source}: missing header row")));
    }
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| KnockoffError::Parse(format!("{source}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols {
            return Err(KnockoffError::Parse(format!(
                "{source}: line {line}: expected {cols} columns, found {}",
                rec.len()
            )));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                KnockoffError::Parse(format!("{source}: line {line}, column {}: cannot parse {cell:?} as a number", c + 1))
            })?;
            if !v.is_finite() {
                return Err(KnockoffError::Parse(format!(
                    "{source}: line {line}, column {}: non-finite value {cell:?}",
                    c + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    Ok((header, DMatrix::from_row_slice(rows, cols, &values)))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    Ok(parse_matrix_csv(open(path)?, &path.display().to_string())?.1)
}

/// A single-column CSV as a vector.
pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(KnockoffError::Shape(format!("{}: expected one column, found {}", path.display(), m.ncols())));
    }
    Ok(m.column(0).clone_owned())
}

/// Default header `x1, ..., xp`.
pub fn default_header(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn write_matrix_csv_to<W: Write>(writer: W, m: &DMatrix<f64>, header: &[String]) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(KnockoffError::Shape(format!("header has {} names for {} columns", header.len(), m.ncols())));
    }
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| KnockoffError::Parse(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let owned;
    let header = match header {
        Some(h) => h,
        None => {
            owned = default_header(m.ncols());
            &owned
        }
    };
    write_matrix_csv_to(BufWriter::new(create(path.as_ref())?), m, header)
}

pub fn write_vector_csv(path: impl AsRef<Path>, v: &DVector<f64>, name: &str) -> Result<()> {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_matrix_csv(path, &m, Some(&[name.to_string()]))
}

/// Reads a JSON config, reporting the line and column of any error.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| KnockoffError::Parse(format!("{}: {e}", path.display())))
}

/// Common wrapper for every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportEnvelope<T: Serialize> {
    pub format_version: u32,
    pub build: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub result: T,
}

impl<T: Serialize> ReportEnvelope<T> {
    pub fn new(command: &str, seed: Option<u64>, config: &impl Serialize, result: T) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| KnockoffError::Invalid(e.to_string()))?;
        Ok(Self { format_version: FORMAT_VERSION, build: build_id(), command: command.into(), seed, config, result })
    }
}

pub fn report_to_string(report: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| KnockoffError::Invalid(format!("cannot serialize report: {e}")))
}

pub fn write_report_json(path: impl AsRef<Path>, report: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(create(path.as_ref())?);
    f.write_all(report_to_string(report)?.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
