//! Reconstruction-error scoring of newly arrived data and moving-threshold
//! anomaly flags.

use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parafac2::reconstruct_rows;

/// Window length of the moving threshold when none is given.
pub const DEFAULT_WINDOW: usize = 5;

/// Mean absolute deviation between `X_new` and `U_new S_k Vᵀ`.
pub fn slice_error(
    x_new: ArrayView2<'_, f64>,
    u_new: ArrayView2<'_, f64>,
    s_k: ArrayView1<'_, f64>,
    v: ArrayView2<'_, f64>,
) -> f64 {
    let rec = reconstruct_rows(u_new, s_k, v);
    let total: f64 = x_new
        .iter()
        .zip(rec.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    total / x_new.len() as f64
}

/// Mean of [`slice_error`] over the slices that received data.
pub fn tensor_error(
    contributions: &[(
        ArrayView2<'_, f64>,
        ArrayView2<'_, f64>,
        ArrayView1<'_, f64>,
    )],
    v: ArrayView2<'_, f64>,
) -> Result<f64> {
    if contributions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = contributions
        .iter()
        .map(|&(x, u, s)| slice_error(x, u, s, v))
        .sum();
    Ok(sum / contributions.len() as f64)
}

/// Per-position threshold `mean + std` of the trailing `window` values
/// (population std). Positions with fewer than two prior values have no
/// threshold; positions with fewer than `window` prior values use all of
/// them.
pub fn moving_threshold(series: &[f64], window: usize) -> Vec<Option<f64>> {
    assert!(window >= 2, "moving window must be at least 2");
    (0..series.len())
        .map(|t| {
            let prior = &series[t.saturating_sub(window)..t];
            (prior.len() >= 2).then(|| {
                let n = prior.len() as f64;
                let mean = prior.iter().sum::<f64>() / n;
                let var = prior.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                mean + var.sqrt()
            })
        })
        .collect()
}

/// Errors recorded after every update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    /// `(update index, tensor-level error)` in update order.
    pub tensor: Vec<(usize, f64)>,
    /// Per slice: `(update index, slice-level error)` for the updates that
    /// brought that slice data.
    pub slices: BTreeMap<String, Vec<(usize, f64)>>,
}

impl ErrorSeries {
    pub fn record(&mut self, update_index: usize, te: f64, slice_errors: &[(String, f64)]) {
        self.tensor.push((update_index, te));
        for (id, se) in slice_errors {
            self.slices
                .entry(id.clone())
                .or_default()
                .push((update_index, *se));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty() && self.slices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Tensor,
    Slice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub level: Level,
    pub update_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice_id: Option<String>,
    pub score: f64,
    pub threshold: f64,
}

/// Threshold trace of one series: `(update index, score, threshold)`.
pub fn threshold_trace(series: &[(usize, f64)], window: usize) -> Vec<(usize, f64, Option<f64>)> {
    let values: Vec<f64> = series.iter().map(|&(_, e)| e).collect();
    series
        .iter()
        .zip(moving_threshold(&values, window))
        .map(|(&(n, e), th)| (n, e, th))
        .collect()
}

fn flags_of(
    series: &[(usize, f64)],
    window: usize,
    level: Level,
    slice_id: Option<&str>,
) -> Vec<AnomalyFlag> {
    threshold_trace(series, window)
        .into_iter()
        .filter_map(|(n, score, th)| {
            let threshold = th?;
            (score > threshold).then(|| AnomalyFlag {
                level,
                update_index: n,
                slice_id: slice_id.map(str::to_owned),
                score,
                threshold,
            })
        })
        .collect()
}

fn by_score_desc(a: &AnomalyFlag, b: &AnomalyFlag) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score)
}

/// Tensor-level flags followed by slice-level flags, each sorted by score,
/// highest first. Slice thresholds come from each slice's own history.
pub fn detect(errors: &ErrorSeries, window: usize) -> Vec<AnomalyFlag> {
    let mut tensor = flags_of(&errors.tensor, window, Level::Tensor, None);
    tensor.sort_by(by_score_desc);
    let mut slices: Vec<_> = errors
        .slices
        .iter()
        .flat_map(|(id, s)| flags_of(s, window, Level::Slice, Some(id)))
        .collect();
    slices.sort_by(by_score_desc);
    tensor.extend(slices);
    tensor
}
