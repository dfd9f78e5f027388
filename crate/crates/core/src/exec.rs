use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How per-slice work and the sums over slices are scheduled.
///
/// `Deterministic` runs everything in slice order and gives bit-identical
/// results across runs. `Parallel` spreads per-slice work over the rayon
/// pool and reduces sums as a tree, so the rounding of aggregated helper
/// entries may differ slightly between runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    #[default]
    Deterministic,
    Parallel,
}

impl ExecMode {
    pub(crate) fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            ExecMode::Deterministic => (0..n).map(f).collect(),
            ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }

    pub(crate) fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        match self {
            ExecMode::Deterministic => (0..n).map(f).collect(),
            ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }

    /// `Σ_i f(i)` over `0..n`, starting from zeros of `shape`.
    pub(crate) fn sum<F>(self, n: usize, shape: (usize, usize), f: F) -> Array2<f64>
    where
        F: Fn(usize) -> Array2<f64> + Sync + Send,
    {
        match self {
            ExecMode::Deterministic => (0..n).fold(Array2::zeros(shape), |mut acc, i| {
                acc += &f(i);
                acc
            }),
            ExecMode::Parallel => (0..n)
                .into_par_iter()
                .map(f)
                .reduce(|| Array2::zeros(shape), |a, b| a + b),
        }
    }
}
