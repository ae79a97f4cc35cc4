//! Plain-text image-table ingestion: one image per row, comma-separated
//! values in [0, 1]. Rows are sparsified by zeroing every entry at or below
//! the threshold; rows whose surviving support exceeds the cap are dropped.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::SparseVector;

pub fn ingest_sparse_images(
    path: impl AsRef<Path>,
    threshold: f64,
    n: usize,
    k_max: usize,
) -> Result<Vec<SparseVector>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(n);
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                reason: format!("non-numeric field {:?}", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    reason: format!("non-finite value {v}"),
                });
            }
            values.push(v);
        }
        if values.len() != n {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                reason: format!("expected {n} values, found {}", values.len()),
            });
        }
        for v in values.iter_mut() {
            if *v <= threshold {
                *v = 0.0;
            }
        }
        let sparse = SparseVector::from_dense(&values)?;
        if sparse.support_size() <= k_max {
            out.push(sparse);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("no rows survived thresholding and the sparsity cap"));
    }
    Ok(out)
}

/// Writes sparse vectors back to the table format (dense rows,
/// comma-separated). Values use the shortest round-trippable decimal form.
pub fn write_sparse_images(path: impl AsRef<Path>, vectors: &[SparseVector]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for v in vectors {
        let dense = v.densify();
        let row: Vec<String> = dense.iter().map(|x| format!("{x}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Writes dense rows (e.g. synthesized digit tables) to the same format.
pub fn write_dense_rows(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for dense in rows {
        let row: Vec<String> = dense.iter().map(|x| format!("{x}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
