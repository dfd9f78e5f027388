//! Local and global reconstruction errors of a streaming run.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::anomaly::{slice_error, tensor_error};
use crate::error::Result;
use crate::parafac2::reconstruct_rows;
use crate::stream::{StreamState, UpdateOutcome};
use crate::tensor::{IrregularTensor, UpdateBatch};

/// `(X_new, U_new, s_k)` for every slice of `batch`, taken from the state
/// produced by the update that consumed it.
pub fn batch_contributions<'a>(
    state: &'a StreamState,
    batch: &'a UpdateBatch,
    outcome: &UpdateOutcome,
) -> Vec<(
    ArrayView2<'a, f64>,
    ArrayView2<'a, f64>,
    ArrayView1<'a, f64>,
)> {
    batch
        .slices()
        .zip(&outcome.slots)
        .map(|(s, &k)| {
            (
                s.rows.view(),
                state.factors.u[k].last().view(),
                state.factors.w.row(k),
            )
        })
        .collect()
}

/// Slice-level errors of the newest batch, keyed by slice id.
pub fn slice_errors(
    state: &StreamState,
    batch: &UpdateBatch,
    outcome: &UpdateOutcome,
) -> Vec<(String, f64)> {
    let v = state.factors.v.view();
    batch
        .slices()
        .zip(batch_contributions(state, batch, outcome))
        .map(|(s, (x, u, w))| (s.id.clone(), slice_error(x, u, w, v)))
        .collect()
}

/// Tensor-level error of the newest batch under post-update factors.
pub fn local_error(
    state: &StreamState,
    batch: &UpdateBatch,
    outcome: &UpdateOutcome,
) -> Result<f64> {
    tensor_error(
        &batch_contributions(state, batch, outcome),
        state.factors.v.view(),
    )
}

/// Every row ingested so far, in the block structure of the stored `U_k`.
#[derive(Debug, Clone, Default)]
pub struct History {
    blocks: Vec<Vec<Array2<f64>>>,
}

impl History {
    pub fn from_initial(tensor: &IrregularTensor) -> Self {
        Self {
            blocks: tensor
                .slices()
                .iter()
                .map(|s| vec![s.rows.clone()])
                .collect(),
        }
    }

    /// Appends a consumed batch. Must follow the update that consumed it.
    pub fn absorb(&mut self, batch: &UpdateBatch, outcome: &UpdateOutcome) {
        for (s, &k) in batch.slices().zip(&outcome.slots) {
            if k == self.blocks.len() {
                self.blocks.push(Vec::new());
            }
            self.blocks[k].push(s.rows.clone());
        }
    }

    pub fn slot(&self, k: usize) -> &[Array2<f64>] {
        &self.blocks[k]
    }

    pub fn num_slices(&self) -> usize {
        self.blocks.len()
    }
}

/// Error over previously ingested rows plus error over the newest batch.
///
/// The first term averages, over slices that held data before this batch,
/// the mean absolute deviation of their old rows against the stored old
/// row factors with the current `S_k` and `V`. The second term is
/// [`local_error`]. `history` must not yet contain `batch`.
pub fn global_error(
    state: &StreamState,
    history: &History,
    batch: &UpdateBatch,
    outcome: &UpdateOutcome,
) -> Result<f64> {
    let v = state.factors.v.view();
    let old_slices = history.num_slices();
    let mut old_term = 0.0;
    for k in 0..old_slices {
        let x_blocks = history.slot(k);
        let u_blocks = &state.factors.u[k].blocks()[..x_blocks.len()];
        let s = state.factors.w.row(k);
        let mut abs_sum = 0.0;
        let mut count = 0usize;
        for (x, u) in x_blocks.iter().zip(u_blocks) {
            let rec = reconstruct_rows(u.view(), s, v);
            abs_sum += x
                .iter()
                .zip(rec.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
            count += x.len();
        }
        old_term += abs_sum / count as f64;
    }
    if old_slices > 0 {
        old_term /= old_slices as f64;
    }
    Ok(old_term + local_error(state, batch, outcome)?)
}
