//! Irregular tensors: slices sharing a column count but not a row count.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One slice `X_k`: rows are consecutive time steps starting at
/// `first_time_step`, columns are the shared feature axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMatrix {
    pub id: String,
    pub rows: Array2<f64>,
    pub first_time_step: usize,
}

impl SliceMatrix {
    pub fn new(id: impl Into<String>, rows: Array2<f64>, first_time_step: usize) -> Self {
        Self {
            id: id.into(),
            rows,
            first_time_step,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.nrows()
    }

    /// One past the last time step covered by this slice.
    pub fn end_time_step(&self) -> usize {
        self.first_time_step + self.rows.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularTensor {
    slices: Vec<SliceMatrix>,
    ncols: usize,
}

impl IrregularTensor {
    pub fn new(slices: Vec<SliceMatrix>) -> Result<Self> {
        let ncols = slices
            .first()
            .map(|s| s.rows.ncols())
            .ok_or_else(|| Error::InvalidArgument("a tensor needs at least one slice".into()))?;
        if ncols == 0 {
            return Err(Error::Shape("slices must have at least one column".into()));
        }
        let mut seen = HashSet::new();
        for s in &slices {
            if s.rows.ncols() != ncols {
                return Err(Error::Shape(format!(
                    "slice `{}` has {} columns, expected {ncols}",
                    s.id,
                    s.rows.ncols()
                )));
            }
            if s.rows.nrows() == 0 {
                return Err(Error::Shape(format!("slice `{}` has no rows", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateSlice(s.id.clone()));
            }
        }
        Ok(Self { slices, ncols })
    }

    pub fn slices(&self) -> &[SliceMatrix] {
        &self.slices
    }

    pub fn into_slices(self) -> Vec<SliceMatrix> {
        self.slices
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn total_rows(&self) -> usize {
        self.slices.iter().map(SliceMatrix::nrows).sum()
    }

    pub fn min_rows(&self) -> usize {
        self.slices
            .iter()
            .map(SliceMatrix::nrows)
            .min()
            .unwrap_or(0)
    }

    /// Number of time steps spanned, counted from time step 0.
    pub fn duration(&self) -> usize {
        self.slices
            .iter()
            .map(SliceMatrix::end_time_step)
            .max()
            .unwrap_or(0)
    }

    pub fn get(&self, id: &str) -> Option<&SliceMatrix> {
        self.slices.iter().find(|s| s.id == id)
    }

    /// Sum of squared entries over all slices.
    pub fn squared_norm(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.rows.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// The data arriving between two consecutive updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateBatch {
    /// 1-based position in the update sequence.
    pub update_index: usize,
    /// New rows of slices that already hold data.
    pub existing_rows: Vec<SliceMatrix>,
    /// Slices seen for the first time.
    pub new_slices: Vec<SliceMatrix>,
    /// First and last time step of the update cycle (inclusive).
    pub cycle_span: (usize, usize),
}

impl UpdateBatch {
    /// Checks the structural batch invariants.
    pub fn validate(&self) -> Result<()> {
        if self.existing_rows.is_empty() && self.new_slices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let (first, last) = self.cycle_span;
        if last < first {
            return Err(Error::InvalidArgument(format!(
                "cycle span ({first}, {last}) is reversed"
            )));
        }
        let span = last - first + 1;
        let mut ids = HashSet::new();
        let mut ncols = None;
        for s in self.slices() {
            if s.nrows() == 0 {
                return Err(Error::Shape(format!("batch slice `{}` has no rows", s.id)));
            }
            if *ncols.get_or_insert(s.rows.ncols()) != s.rows.ncols() {
                return Err(Error::Shape(format!(
                    "batch slice `{}` has {} columns",
                    s.id,
                    s.rows.ncols()
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateSlice(s.id.clone()));
            }
        }
        for s in &self.existing_rows {
            if s.nrows() > span {
                return Err(Error::Shape(format!(
                    "slice `{}` carries {} new rows but the cycle spans {span} steps",
                    s.id,
                    s.nrows()
                )));
            }
        }
        Ok(())
    }

    /// Existing rows first, then new slices.
    pub fn slices(&self) -> impl Iterator<Item = &SliceMatrix> {
        self.existing_rows.iter().chain(self.new_slices.iter())
    }

    pub fn rows_ingested(&self) -> usize {
        self.slices().map(SliceMatrix::nrows).sum()
    }

    pub fn ncols(&self) -> Option<usize> {
        self.slices().next().map(|s| s.rows.ncols())
    }
}
