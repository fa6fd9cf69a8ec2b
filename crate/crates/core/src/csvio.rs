//! Plain CSV tables of floating-point columns.

use std::path::Path;

use crate::error::{Error, Result};

/// Fixed-width exponent notation with 17 significant digits, which
/// round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<P, R, I>(path: P, header: &[&str], rows: I) -> Result<()>
where
    P: AsRef<Path>,
    R: IntoIterator<Item = String>,
    I: IntoIterator<Item = R>,
{
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read<P: AsRef<Path>>(path: P) -> Result<Table> {
        let display = path.as_ref().display().to_string();
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { path: display, header, rows })
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Table { path: self.path.clone(), msg: msg.into() }
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(self.err(format!("expected columns {expected:?}, found {:?}", self.header)));
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| self.err(format!("missing column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        self.column_at(j)
    }

    pub fn column_at(&self, j: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.get(j)
                    .ok_or_else(|| self.err(format!("row {} is short", i + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| self.err(format!("row {}, column {}: {e}", i + 1, j + 1)))
            })
            .collect()
    }
}
