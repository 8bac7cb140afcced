//! CSV ingestion and design-matrix preprocessing.

use std::path::Path;

use crate::error::{CliError, Result};

/// Numeric table with complete rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Rows dropped because a cell was missing.
    pub dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

/// Reads a CSV file with a header row. Rows with an empty or `NA` cell are dropped.
pub fn load_csv(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let csv_err = |source| CliError::Csv { path: path.to_path_buf(), source };
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        let row = record
            .iter()
            .zip(&headers)
            .map(|(cell, column)| {
                cell.parse::<f64>().map_err(|_| CliError::Cell {
                    path: path.to_path_buf(),
                    row: i + 1,
                    column: column.clone(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{} has no complete data rows", path.display())));
    }
    Ok(Table { headers, rows, dropped })
}

/// Message for the rows removed by [`load_csv`], if any.
pub fn dropped_warning(t: &Table) -> Option<String> {
    match t.dropped {
        0 => None,
        1 => Some("dropped 1 row with missing values".to_string()),
        n => Some(format!("dropped {n} rows with missing values")),
    }
}

impl Table {
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Input(format!("no column named '{name}' (columns: {})", self.headers.join(", ")))
        })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Rows restricted to the given columns.
    pub fn select(&self, columns: &[usize]) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| columns.iter().map(|&j| r[j]).collect()).collect()
    }
}

/// Orthonormal polynomial basis of degree 1 and 2 for one covariate: the
/// centered powers `1, x, x^2` are orthogonalized by Gram-Schmidt and the two
/// non-constant columns are scaled to unit length.
pub fn poly2(x: &[f64]) -> Result<[Vec<f64>; 2]> {
    let n = x.len();
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(CliError::Input("a degree-2 polynomial basis needs at least 3 distinct values".to_string()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    for power in 1..=2 {
        let mut v: Vec<f64> = c.iter().map(|t| t.powi(power)).collect();
        // two passes keep the columns orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    let second = basis.pop().expect("three columns");
    let first = basis.pop().expect("three columns");
    Ok([first, second])
}

/// Replaces every column by its two orthonormal polynomial columns.
pub fn expand_poly2(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let q = rows.first().map_or(0, Vec::len);
    let mut blocks = Vec::with_capacity(q);
    for j in 0..q {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        blocks.push(poly2(&col)?);
    }
    Ok((0..rows.len())
        .map(|i| blocks.iter().flat_map(|[a, b]| [a[i], b[i]]).collect())
        .collect())
}
