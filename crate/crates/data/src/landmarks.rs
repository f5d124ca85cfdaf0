//! Landmark CSV: header `x0,y0,...,x{m-1},y{m-1}`, one row per frame.

use std::path::Path;

use crate::error::{DataError, Result};

pub fn write_landmarks(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || width % 2 != 0 || rows.iter().any(|r| r.len() != width) {
        return Err(DataError::Config("landmark rows must share one even, nonzero length".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DataError::Config("non-finite landmark coordinate".into()));
    }
    let wrap = |e: csv::Error| DataError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header(width / 2)).map_err(wrap)?;
    for row in rows {
        // Display for f64 prints the shortest string that parses back exactly
        w.write_record(row.iter().map(|v| v.to_string())).map_err(wrap)?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_landmarks(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let wrap = |e: csv::Error| DataError::format(path, e.to_string());
    let mut r = csv::Reader::from_reader(file);
    let head: Vec<String> = r.headers().map_err(wrap)?.iter().map(str::to_owned).collect();
    if head.is_empty() || head.len() % 2 != 0 || head != header(head.len() / 2) {
        return Err(DataError::format(path, "header must be x0,y0,...,xN,yN"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DataError::format(path, format!("row {}: {e}", rows.len() + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::format(path, "no landmark rows"));
    }
    Ok(rows)
}

fn header(m: usize) -> Vec<String> {
    (0..m).flat_map(|i| [format!("x{i}"), format!("y{i}")]).collect()
}
