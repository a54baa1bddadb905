//! Deterministic CSV diagnostics: one header row, 17-significant-digit
//! values (exact f64 round trip).

use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("row {row} has {got} values, header has {expect} columns")]
    Ragged { row: usize, got: usize, expect: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot parse `{0}` as a number")]
    Parse(String),
    #[error("empty file")]
    Empty,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_diagnostics(columns: &[&str], rows: &[Vec<f64>], path: &Path) -> Result<(), CsvError> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(CsvError::Ragged { row: i, got: row.len(), expect: columns.len() });
        }
    }
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_diagnostics(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CsvError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(CsvError::Empty)?;
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            row.push(cell.parse::<f64>().map_err(|_| CsvError::Parse(cell.into()))?);
        }
        if row.len() != columns.len() {
            return Err(CsvError::Ragged { row: i, got: row.len(), expect: columns.len() });
        }
        rows.push(row);
    }
    Ok((columns, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let rows = vec![
            vec![0.1, 1.0 / 3.0, 1e-300],
            vec![-2.5e17, std::f64::consts::PI, 7.0],
        ];
        write_diagnostics(&["a", "b", "c"], &rows, &path).unwrap();
        let (cols, back) = read_diagnostics(&path).unwrap();
        assert_eq!(cols, vec!["a", "b", "c"]);
        assert_eq!(back, rows);
    }

    #[test]
    fn empty_series_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_diagnostics(&["t", "v"], &[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,v\n");
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let err = write_diagnostics(&["a", "b"], &[vec![1.0]], &path).unwrap_err();
        assert!(matches!(err, CsvError::Ragged { .. }));
    }
}
