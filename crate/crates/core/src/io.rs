//! CSV matrices in, JSON/JSONL results out.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{KnockoffError, Result};

/// A parsed numeric table with its optional header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

impl Table {
    /// Index of a named column, or of a numeric 0-based index.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        if let Some(h) = &self.header {
            if let Some(i) = h.iter().position(|c| c == name) {
                return Ok(i);
            }
        }
        match name.parse::<usize>() {
            Ok(i) if i < self.data.ncols() => Ok(i),
            Ok(i) => Err(KnockoffError::IndexOutOfRange { index: i, dim: self.data.ncols() }),
            Err(_) => Err(KnockoffError::InvalidInput(format!("no column named `{name}`"))),
        }
    }

    /// Split off one column as the response.
    pub fn split_column(&self, name: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let c = self.column_index(name)?;
        let y = self.data.column(c).clone_owned();
        Ok((self.data.clone().remove_column(c), y))
    }
}

/// Parse CSV text. Row numbers in errors are 1-based file lines, columns are
/// 1-based fields.
pub fn read_csv_from<R: Read>(reader: R, header: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names = if header {
        Some(rdr.headers().map_err(csv_error)?.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width = names.as_ref().map(Vec::len);
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(rows + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(KnockoffError::Data {
                    row: line,
                    col: rec.len().min(w) + 1,
                    msg: format!("ragged row: expected {w} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| KnockoffError::Data {
                row: line,
                col: c + 1,
                msg: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(KnockoffError::Data {
                    row: line,
                    col: c + 1,
                    msg: format!("non-finite value `{field}`"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(KnockoffError::InvalidInput("CSV contains no data rows".into()));
    }
    Ok(Table { header: names, data: DMatrix::from_row_slice(rows, cols, &values) })
}

fn csv_error(e: csv::Error) -> KnockoffError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => KnockoffError::Io(io),
        csv::ErrorKind::Utf8 { err, .. } => {
            KnockoffError::Data { row, col: err.field() + 1, msg: "invalid UTF-8".into() }
        }
        other => KnockoffError::Data { row, col: 0, msg: format!("{other:?}") },
    }
}

pub fn read_csv(path: &Path, header: bool) -> Result<Table> {
    read_csv_from(File::open(path)?, header)
}

/// A single-column file (or the only column of a table) as a vector.
pub fn read_vector(path: &Path, header: bool) -> Result<DVector<f64>> {
    let t = read_csv(path, header)?;
    if t.data.ncols() != 1 {
        return Err(KnockoffError::DimensionMismatch(format!(
            "{} has {} columns, expected one",
            path.display(),
            t.data.ncols()
        )));
    }
    Ok(t.data.column(0).clone_owned())
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv_to<W: Write>(writer: W, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = BufWriter::new(writer);
    if let Some(h) = header {
        if h.len() != m.ncols() {
            return Err(KnockoffError::DimensionMismatch(format!(
                "{} header names for {} columns",
                h.len(),
                m.ncols()
            )));
        }
        writeln!(w, "{}", h.join(","))?;
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_value(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    write_csv_to(File::create(path)?, m, header)
}

pub fn write_jsonl_to<W: Write, T: Serialize>(writer: W, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Write result records as JSON lines.
pub fn write_results(path: &Path, records: &[impl Serialize]) -> Result<()> {
    write_jsonl_to(File::create(path)?, records)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| KnockoffError::Data {
            row: i + 1,
            col: e.column(),
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
