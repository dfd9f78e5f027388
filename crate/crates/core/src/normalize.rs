//! Per-slice, per-column min-max scaling.
//!
//! Each column `j` of slice `k` is mapped to
//! `(x - min_{k,j}) / (max_{k,j} - min_{k,j})`; a degenerate column
//! (`max == min`) maps to `0.0`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::tensor::{IrregularTensor, SliceMatrix, UpdateBatch};

/// Which statistics scale an incoming batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsPolicy {
    /// Batches are scaled with statistics of strictly earlier data; the
    /// statistics absorb each batch after it has been scaled. A slice with no
    /// earlier data is scaled with its own first batch.
    #[default]
    CausalFrozen,
    /// Statistics come from the full dataset up front and never change.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ColumnRange {
    pub fn of(rows: ArrayView2<'_, f64>) -> Self {
        let min = rows
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let max = rows
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Self { min, max }
    }

    fn absorb(&mut self, rows: ArrayView2<'_, f64>) {
        let other = Self::of(rows);
        for j in 0..self.min.len() {
            self.min[j] = self.min[j].min(other.min[j]);
            self.max[j] = self.max[j].max(other.max[j]);
        }
    }

    pub fn apply(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = rows.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[j], self.max[j]);
            let width = hi - lo;
            if width > 0.0 {
                col.mapv_inplace(|x| (x - lo) / width);
            } else {
                col.fill(0.0);
            }
        }
        out
    }
}

/// Running column ranges keyed by slice id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub slices: BTreeMap<String, ColumnRange>,
}

impl ColumnStats {
    pub fn from_tensor(tensor: &IrregularTensor) -> Self {
        let slices = tensor
            .slices()
            .iter()
            .map(|s| (s.id.clone(), ColumnRange::of(s.rows.view())))
            .collect();
        Self { slices }
    }

    pub fn get(&self, id: &str) -> Option<&ColumnRange> {
        self.slices.get(id)
    }

    fn absorb(&mut self, slice: &SliceMatrix) {
        self.slices
            .entry(slice.id.clone())
            .and_modify(|r| r.absorb(slice.rows.view()))
            .or_insert_with(|| ColumnRange::of(slice.rows.view()));
    }

    fn scale(&self, slice: &SliceMatrix) -> SliceMatrix {
        let rows = match self.get(&slice.id) {
            Some(range) => range.apply(slice.rows.view()),
            None => ColumnRange::of(slice.rows.view()).apply(slice.rows.view()),
        };
        SliceMatrix::new(slice.id.clone(), rows, slice.first_time_step)
    }
}

fn advance(stats: &ColumnStats, policy: StatsPolicy, seen: &[&SliceMatrix]) -> ColumnStats {
    let mut next = stats.clone();
    match policy {
        StatsPolicy::CausalFrozen => seen.iter().for_each(|s| next.absorb(s)),
        // global stats are fixed; only fill in slices they never covered
        StatsPolicy::Global => seen
            .iter()
            .filter(|s| !stats.slices.contains_key(&s.id))
            .for_each(|s| next.absorb(s)),
    }
    next
}

/// Scales every slice of `batch` and returns the statistics to use for the
/// next batch.
pub fn normalize_batch(
    batch: &UpdateBatch,
    stats: &ColumnStats,
    policy: StatsPolicy,
) -> (UpdateBatch, ColumnStats) {
    let scaled = UpdateBatch {
        update_index: batch.update_index,
        existing_rows: batch.existing_rows.iter().map(|s| stats.scale(s)).collect(),
        new_slices: batch.new_slices.iter().map(|s| stats.scale(s)).collect(),
        cycle_span: batch.cycle_span,
    };
    let seen: Vec<_> = batch.slices().collect();
    (scaled, advance(stats, policy, &seen))
}

/// Scales the initial tensor. Slices missing from `stats` are scaled by
/// their own ranges.
pub fn normalize_tensor(
    tensor: &IrregularTensor,
    stats: &ColumnStats,
    policy: StatsPolicy,
) -> (IrregularTensor, ColumnStats) {
    let slices: Vec<_> = tensor.slices().iter().map(|s| stats.scale(s)).collect();
    let seen: Vec<_> = tensor.slices().iter().collect();
    let scaled = IrregularTensor::new(slices).expect("scaling preserves tensor invariants");
    (scaled, advance(stats, policy, &seen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn batch_of(id: &str, rows: Array2<f64>, existing: bool) -> UpdateBatch {
        let s = SliceMatrix::new(id, rows, 0);
        UpdateBatch {
            update_index: 1,
            existing_rows: if existing { vec![s.clone()] } else { vec![] },
            new_slices: if existing { vec![] } else { vec![s] },
            cycle_span: (0, 9),
        }
    }

    #[test]
    fn endpoints_map_to_zero_and_one() {
        let t = IrregularTensor::new(vec![SliceMatrix::new("a", array![[2.0], [4.0], [6.0]], 0)])
            .unwrap();
        let (scaled, _) = normalize_tensor(&t, &ColumnStats::default(), StatsPolicy::CausalFrozen);
        assert_eq!(scaled.slices()[0].rows, array![[0.0], [0.5], [1.0]]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let t = IrregularTensor::new(vec![SliceMatrix::new("a", array![[5.0], [5.0]], 0)]).unwrap();
        let (scaled, _) = normalize_tensor(&t, &ColumnStats::default(), StatsPolicy::CausalFrozen);
        assert_eq!(scaled.slices()[0].rows, array![[0.0], [0.0]]);
    }

    #[test]
    fn frozen_stats_extrapolate_beyond_one() {
        let t = IrregularTensor::new(vec![SliceMatrix::new("a", array![[1.0], [3.0]], 0)]).unwrap();
        let (_, stats) = normalize_tensor(&t, &ColumnStats::default(), StatsPolicy::CausalFrozen);
        let (scaled, next) = normalize_batch(
            &batch_of("a", array![[5.0]], true),
            &stats,
            StatsPolicy::CausalFrozen,
        );
        assert_eq!(scaled.existing_rows[0].rows, array![[2.0]]);
        // the batch is absorbed only after it has been scaled
        assert_eq!(next.get("a").unwrap().max, vec![5.0]);
    }

    #[test]
    fn global_policy_keeps_stats_fixed() {
        let full =
            IrregularTensor::new(vec![SliceMatrix::new("a", array![[0.0], [10.0]], 0)]).unwrap();
        let stats = ColumnStats::from_tensor(&full);
        let (scaled, next) = normalize_batch(
            &batch_of("a", array![[20.0]], true),
            &stats,
            StatsPolicy::Global,
        );
        assert_eq!(scaled.existing_rows[0].rows, array![[2.0]]);
        assert_eq!(next, stats);
    }

    #[test]
    fn unseen_slice_uses_its_own_range() {
        let (scaled, next) = normalize_batch(
            &batch_of("fresh", array![[1.0, 7.0], [3.0, 7.0]], false),
            &ColumnStats::default(),
            StatsPolicy::CausalFrozen,
        );
        assert_eq!(scaled.new_slices[0].rows, array![[0.0, 0.0], [1.0, 0.0]]);
        assert!(next.get("fresh").is_some());
    }
}
