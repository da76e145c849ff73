//! File helpers shared by the CSV/metadata writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed write never leaves a partial file behind.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Splits CSV text into a header and data rows, rejecting empty input and
/// any header other than `expected`.
pub fn parse_csv<'a>(path: &Path, text: &'a str, expected: &[&str]) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::schema(path, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != expected {
        return Err(Error::schema(
            path,
            format!("expected header '{}', found '{}'", expected.join(","), header),
        ));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != expected.len() {
                Err(Error::schema(path, format!("row {} has {} fields", i + 1, fields.len())))
            } else {
                Ok(fields)
            }
        })
        .collect()
}

pub fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::schema(path, format!("'{field}' is not a number")))
}
