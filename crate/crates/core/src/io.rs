//! CSV and JSON helpers shared by the artifact writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so the
//! same values always produce the same bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Nodal values with their coordinates, one degree of freedom per row in
/// degree-of-freedom order (first axis fastest).
pub fn field_csv(field: &ScalarField, value_name: &str) -> String {
    let grid = field.grid();
    let mut out = String::new();
    out.push_str(if grid.dim() == 1 { "x1," } else { "x1,x2," });
    out.push_str(value_name);
    out.push('\n');
    for (dof, v) in field.values().iter().enumerate() {
        let x = grid.dof_coord(dof);
        out.push_str(&x[0].to_string());
        out.push(',');
        if grid.dim() == 2 {
            out.push_str(&x[1].to_string());
            out.push(',');
        }
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

pub fn write_field_csv(path: &Path, field: &ScalarField, value_name: &str) -> Result<()> {
    write_text(path, &field_csv(field, value_name))
}

/// Reads a field written by [`write_field_csv`] back onto `grid`.
pub fn read_field_csv(path: &Path, grid: &Grid) -> Result<ScalarField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::with_capacity(grid.dof_count());
    for (i, line) in text.lines().skip(1).filter(|l| !l.trim().is_empty()).enumerate() {
        let last = line
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::format(path, format!("row {} is empty", i + 2)))?;
        let v: f64 = last
            .trim()
            .parse()
            .map_err(|e| Error::format(path, format!("row {}: {e}", i + 2)))?;
        values.push(v);
    }
    ScalarField::new(grid.clone(), values).map_err(|e| Error::format(path, e.to_string()))
}

/// Aligned-column CSV: every cell is right-padded to the column width.
pub fn aligned_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0usize; cols];
    for (c, h) in header.iter().enumerate() {
        width[c] = h.len();
    }
    for row in rows {
        for (c, cell) in row.iter().enumerate().take(cols) {
            width[c] = width[c].max(cell.len());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        let mut line = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c > 0 {
                line.push_str(", ");
            }
            if c + 1 == cells.len() {
                line.push_str(cell);
            } else {
                line.push_str(&format!("{cell:<w$}", w = width[c]));
            }
        }
        line.push('\n');
        line
    };
    let mut out = fmt_row(header);
    for row in rows {
        out.push_str(&fmt_row(row));
    }
    out
}
