//! CSV and JSON exchange formats.
//!
//! Curve files: the first row holds the grid nodes, every later row one
//! curve. Scalar files: an optional `y` header, then one value per line.
//! Matrix files: plain rows. Numbers are written with 17 significant digits
//! so that every file reads back bit-exactly. Writes go to a temporary file
//! in the target directory and are renamed into place.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{CurveSet, Grid};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(r, line)| {
            line.split(',')
                .enumerate()
                .map(|(c, cell)| {
                    cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                        row: r + 1,
                        column: c + 1,
                        message: format!("{:?}: {e}", cell.trim()),
                    })
                })
                .collect()
        })
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], first_row: usize) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Parse {
                row: first_row + i,
                column: r.len().min(ncols) + 1,
                message: format!("expected {ncols} columns, found {}", r.len()),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |a, b| rows[a][b]))
}

pub fn curves_to_string(w: &CurveSet) -> String {
    let mut out = join(w.grid().nodes().iter().copied());
    out.push('\n');
    for row in w.data().row_iter() {
        out.push_str(&join(row.iter().copied()));
        out.push('\n');
    }
    out
}

pub fn curves_from_str(text: &str) -> Result<CurveSet> {
    let rows = parse_rows(text)?;
    let Some((nodes, curves)) = rows.split_first() else {
        return Err(Error::Parse { row: 1, column: 1, message: "empty curve file".into() });
    };
    let grid = Grid::new(nodes.clone())
        .map_err(|e| Error::Parse { row: 1, column: 1, message: format!("invalid grid: {e}") })?;
    let data = rows_to_matrix(curves, 2)?;
    if curves.is_empty() {
        return Err(Error::Parse { row: 2, column: 1, message: "no curves after the grid row".into() });
    }
    if data.ncols() != grid.len() {
        return Err(Error::Parse {
            row: 2,
            column: data.ncols().min(grid.len()) + 1,
            message: format!("curves have {} values but the grid has {} nodes", data.ncols(), grid.len()),
        });
    }
    CurveSet::new(data, grid)
}

pub fn write_curves(path: &Path, w: &CurveSet) -> Result<()> {
    atomic_write(path, curves_to_string(w).as_bytes())
}

pub fn read_curves(path: &Path) -> Result<CurveSet> {
    curves_from_str(&fs::read_to_string(path)?)
}

pub fn scalars_to_string(y: &[f64]) -> String {
    let mut out = String::from("y\n");
    for v in y {
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    out
}

pub fn scalars_from_str(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    if let Some((_, first)) = lines.peek() {
        if first.trim().parse::<f64>().is_err() && first.trim().chars().next().is_some_and(char::is_alphabetic) {
            lines.next();
        }
    }
    lines
        .map(|(r, line)| {
            line.trim().parse::<f64>().map_err(|e| Error::Parse {
                row: r + 1,
                column: 1,
                message: format!("{:?}: {e}", line.trim()),
            })
        })
        .collect()
}

pub fn write_scalars(path: &Path, y: &[f64]) -> Result<()> {
    atomic_write(path, scalars_to_string(y).as_bytes())
}

pub fn read_scalars(path: &Path) -> Result<Vec<f64>> {
    scalars_from_str(&fs::read_to_string(path)?)
}

pub fn matrix_to_string(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        out.push_str(&join(row.iter().copied()));
        out.push('\n');
    }
    out
}

pub fn matrix_from_str(text: &str) -> Result<DMatrix<f64>> {
    rows_to_matrix(&parse_rows(text)?, 1)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    atomic_write(path, matrix_to_string(m).as_bytes())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    matrix_from_str(&fs::read_to_string(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
