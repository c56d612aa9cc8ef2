//! CSV and JSON helpers shared by every writer in the crate.
//!
//! Floats in CSV files carry 17 significant digits so they round-trip
//! exactly.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("`{s}` is not a number")))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `m` with an optional header row.
pub fn write_matrix(path: &Path, header: Option<&[String]>, m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| format_float(v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a numeric CSV; `has_header` skips the first row.
pub fn read_matrix(path: &Path, has_header: bool) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for rec in r.records() {
        let rec = rec?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::invalid(format!(
                    "{}: row {} has {} fields, expected {c}",
                    path.display(),
                    rows + 1,
                    rec.len()
                )))
            }
            _ => {}
        }
        for f in rec.iter() {
            values.push(parse_float(f)?);
        }
        rows += 1;
    }
    Ok(Matrix::from_row_iterator(rows, cols.unwrap_or(0), values))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses JSON text, reporting schema violations with their JSON path.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(parse_float(&format_float(v)).unwrap(), v);
        }
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = Matrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let header = vec!["a".to_string(), "b".to_string()];
        write_matrix(&path, Some(&header), &m).unwrap();
        assert_eq!(read_matrix(&path, true).unwrap(), m);
    }

    #[test]
    fn json_errors_name_the_path() {
        #[derive(Debug, Deserialize)]
        #[allow(dead_code)]
        struct Inner {
            kind: u8,
        }
        #[derive(Debug, Deserialize)]
        #[allow(dead_code)]
        struct Outer {
            inner: Inner,
        }
        let err = parse_json::<Outer>(r#"{"inner": {"kind": "x"}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "inner.kind"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
