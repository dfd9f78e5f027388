//! Dataset directories and factor exports.
//!
//! A dataset directory holds `manifest.json`:
//!
//! ```json
//! { "slices": [ { "id": "AAPL", "file": "AAPL.csv", "first_time_step": 0 } ] }
//! ```
//!
//! plus one CSV per slice: one row per time step, one column per feature,
//! no header required. A leading non-numeric row is treated as a header and
//! skipped. Batch directories use the same layout and may add
//! `update_index` and `cycle_span` to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parafac2::FactorSet;
use crate::tensor::{IrregularTensor, SliceMatrix, UpdateBatch};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub first_time_step: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub slices: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_span: Option<(usize, usize)>,
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Parses a numeric CSV into a dense matrix.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(Error::format(
                    path,
                    format!("row {} is not numeric", line + 1),
                ))
            }
        };
        if row.is_empty() {
            return Err(Error::format(path, format!("row {} is empty", line + 1)));
        }
        match ncols {
            None => ncols = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::format(
                    path,
                    format!("row {} has {} columns, expected {n}", line + 1, row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| Error::format(path, "no data rows"))?;
    Array2::from_shape_vec((nrows, ncols), values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_matrix(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in m.outer_iter() {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads every slice listed in the manifest of `dir`.
pub fn read_slices(dir: &Path) -> Result<(Manifest, Vec<SliceMatrix>)> {
    let manifest = read_manifest(dir)?;
    let slices = manifest
        .slices
        .iter()
        .map(|e| {
            let rows = read_matrix(&dir.join(&e.file))?;
            Ok(SliceMatrix::new(e.id.clone(), rows, e.first_time_step))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, slices))
}

pub fn load_dataset(dir: &Path) -> Result<IrregularTensor> {
    let (_, slices) = read_slices(dir)?;
    IrregularTensor::new(slices).map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))
}

fn write_slices<'a>(
    dir: &Path,
    slices: impl Iterator<Item = &'a SliceMatrix>,
    mut manifest: Manifest,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in slices {
        let file = format!("{}.csv", file_safe(&s.id));
        write_matrix(&dir.join(&file), s.rows.view())?;
        manifest.slices.push(ManifestEntry {
            id: s.id.clone(),
            file,
            first_time_step: s.first_time_step,
        });
    }
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn write_dataset(dir: &Path, tensor: &IrregularTensor) -> Result<()> {
    write_slices(dir, tensor.slices().iter(), Manifest::default())
}

pub fn write_batch(dir: &Path, batch: &UpdateBatch) -> Result<()> {
    let manifest = Manifest {
        slices: Vec::new(),
        update_index: Some(batch.update_index),
        cycle_span: Some(batch.cycle_span),
    };
    write_slices(dir, batch.slices(), manifest)
}

/// Reads a batch directory, classifying slices as existing or new by
/// `is_known`.
pub fn read_batch(
    dir: &Path,
    next_index: usize,
    is_known: impl Fn(&str) -> bool,
) -> Result<UpdateBatch> {
    let (manifest, slices) = read_slices(dir)?;
    if slices.is_empty() {
        return Err(Error::format(dir.join(MANIFEST), "batch lists no slices"));
    }
    let cycle_span = manifest.cycle_span.unwrap_or_else(|| {
        let first = slices.iter().map(|s| s.first_time_step).min().unwrap_or(0);
        let last = slices.iter().map(|s| s.end_time_step()).max().unwrap_or(1) - 1;
        (first, last)
    });
    let (existing_rows, new_slices) = slices.into_iter().partition(|s| is_known(&s.id));
    let batch = UpdateBatch {
        update_index: manifest.update_index.unwrap_or(next_index),
        existing_rows,
        new_slices,
        cycle_span,
    };
    batch
        .validate()
        .map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))?;
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorExport {
    pub rank: usize,
    pub slice_ids: Vec<String>,
    pub u_files: Vec<String>,
    pub v_file: String,
    pub w_file: String,
    /// Loss after each ALS sweep, when the factors came from a static fit.
    pub iteration_losses: Vec<f64>,
}

/// Writes `U_<id>.csv` per slice, `V.csv`, `W.csv` and `factors.json`.
pub fn export_factors(dir: &Path, factors: &FactorSet, losses: &[f64]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut u_files = Vec::with_capacity(factors.num_slices());
    for (id, u) in factors.ids.iter().zip(&factors.u) {
        let file = format!("U_{}.csv", file_safe(id));
        write_matrix(&dir.join(&file), u.to_matrix().view())?;
        u_files.push(file);
    }
    write_matrix(&dir.join("V.csv"), factors.v.view())?;
    write_matrix(&dir.join("W.csv"), factors.w.view())?;
    let meta = FactorExport {
        rank: factors.rank(),
        slice_ids: factors.ids.clone(),
        u_files,
        v_file: "V.csv".into(),
        w_file: "W.csv".into(),
        iteration_losses: losses.to_vec(),
    };
    let path = dir.join("factors.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_row_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "open,close\n1.5,2\n3,4e-1\n").unwrap();
        assert_eq!(read_matrix(&p).unwrap(), array![[1.5, 2.0], [3.0, 0.4]]);
    }

    #[test]
    fn non_numeric_body_row_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "1,2\nx,4\n").unwrap();
        let err = read_matrix(&p).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_matrix(&p).is_err());
    }

    #[test]
    fn dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let t = IrregularTensor::new(vec![
            SliceMatrix::new("a/b", array![[0.1, 0.2], [1e-17, -3.0]], 0),
            SliceMatrix::new("c", array![[5.0, 6.0]], 4),
        ])
        .unwrap();
        write_dataset(dir.path(), &t).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), t);
    }

    #[test]
    fn missing_manifest_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains(MANIFEST), "{err}");
    }

    #[test]
    fn batch_slices_are_classified() {
        let dir = tempfile::tempdir().unwrap();
        let batch = UpdateBatch {
            update_index: 3,
            existing_rows: vec![SliceMatrix::new("a", array![[1.0, 2.0]], 10)],
            new_slices: vec![SliceMatrix::new("z", array![[3.0, 4.0]], 11)],
            cycle_span: (10, 14),
        };
        write_batch(dir.path(), &batch).unwrap();
        let back = read_batch(dir.path(), 99, |id| id == "a").unwrap();
        assert_eq!(back, batch);
    }
}
