//! Static PARAFAC2 by direct-fitting alternating least squares.
//!
//! Minimizes `Σ_k ‖X_k − U_k S_k Vᵀ‖²_F` with `U_k = Q_k H`, `Q_k`
//! column-orthonormal. Each sweep fits every `Q_k` by a polar factor, projects
//! the slices to `Y_k = Q_kᵀ X_k` and runs one CP-ALS sweep on the stacked
//! `Y` for `H`, `V` and `W` (row `k` of `W` is the diagonal of `S_k`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::linalg::{gram, khatri_rao_contract, polar_factor, scale_columns, solve_sym_right};
use crate::tensor::IrregularTensor;

/// Row blocks of one `U_k`, stacked vertically in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowBlocks(Vec<Array2<f64>>);

impl RowBlocks {
    pub fn single(block: Array2<f64>) -> Self {
        Self(vec![block])
    }

    pub fn push(&mut self, block: Array2<f64>) {
        self.0.push(block);
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.0
    }

    pub fn last(&self) -> &Array2<f64> {
        self.0.last().expect("row blocks are never empty")
    }

    pub fn nrows(&self) -> usize {
        self.0.iter().map(Array2::nrows).sum()
    }

    /// All blocks concatenated.
    pub fn to_matrix(&self) -> Array2<f64> {
        let views: Vec<_> = self.0.iter().map(Array2::view).collect();
        ndarray::concatenate(Axis(0), &views).expect("blocks share a column count")
    }
}

/// `X_k ≈ U_k · diag(W(k,:)) · Vᵀ` for every slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSet {
    pub ids: Vec<String>,
    pub u: Vec<RowBlocks>,
    pub w: Array2<f64>,
    pub v: Array2<f64>,
}

impl FactorSet {
    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn num_slices(&self) -> usize {
        self.ids.len()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    /// Checks that `U_k`, `W` and `V` agree on the rank and slice count.
    pub fn validate(&self) -> Result<()> {
        let r = self.rank();
        let k = self.ids.len();
        if self.u.len() != k || self.w.nrows() != k {
            return Err(Error::Shape(format!(
                "{k} slice ids but {} U blocks and {} W rows",
                self.u.len(),
                self.w.nrows()
            )));
        }
        if self.w.ncols() != r
            || self
                .u
                .iter()
                .flat_map(|u| u.blocks())
                .any(|b| b.ncols() != r)
        {
            return Err(Error::Shape(format!(
                "factor column counts differ from rank {r}"
            )));
        }
        Ok(())
    }

    /// `U_k · diag(W(k,:)) · Vᵀ` for the full stored `U_k`.
    pub fn reconstruct(&self, k: usize) -> Array2<f64> {
        reconstruct_rows(self.u[k].to_matrix().view(), self.w.row(k), self.v.view())
    }
}

/// `U · diag(s) · Vᵀ` for an arbitrary block of rows.
pub fn reconstruct_rows(
    u: ArrayView2<'_, f64>,
    s: ArrayView1<'_, f64>,
    v: ArrayView2<'_, f64>,
) -> Array2<f64> {
    scale_columns(u, s).dot(&v.t())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsOptions {
    pub rank: usize,
    /// Hard cap on full sweeps.
    pub iters: usize,
    pub seed: u64,
    /// Stop once the relative loss change drops below this.
    pub tol: f64,
    pub mode: ExecMode,
    /// Independent random starts; the fit with the lowest final loss wins.
    /// Start `i` is seeded with `seed + i`.
    pub restarts: usize,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            rank: 10,
            iters: 10,
            seed: 0,
            tol: 1e-8,
            mode: ExecMode::Deterministic,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsFit {
    pub factors: FactorSet,
    /// Shared `H` of the `U_k = Q_k H` parameterization.
    pub h: Array2<f64>,
    /// Loss after each completed sweep.
    pub losses: Vec<f64>,
}

impl AlsFit {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// `Σ_k ‖X_k − U_k S_k Vᵀ‖²_F`.
pub fn parafac2_loss(tensor: &IrregularTensor, factors: &FactorSet) -> f64 {
    tensor
        .slices()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let diff = &s.rows - &factors.reconstruct(k);
            diff.iter().map(|d| d * d).sum::<f64>()
        })
        .sum()
}

/// `‖X − X̂‖_F / ‖X‖_F` over the whole tensor.
pub fn relative_error(tensor: &IrregularTensor, factors: &FactorSet) -> f64 {
    (parafac2_loss(tensor, factors) / tensor.squared_norm()).sqrt()
}

/// Column-orthonormal `Q_k` maximizing `tr(Q_kᵀ X_k V S_k Hᵀ)` for each slice.
pub(crate) fn orthogonal_bases(
    tensor: &IrregularTensor,
    h: &Array2<f64>,
    w: &Array2<f64>,
    v: &Array2<f64>,
    mode: ExecMode,
) -> Result<Vec<Array2<f64>>> {
    let slices = tensor.slices();
    mode.try_map(slices.len(), |k| {
        let target = scale_columns(slices[k].rows.dot(v).view(), w.row(k)).dot(&h.t());
        polar_factor(target.view()).ok_or_else(|| Error::Decomposition {
            slice: slices[k].id.clone(),
            reason: "SVD of the projected slice did not converge".into(),
        })
    })
}

/// Fits a rank-`opts.rank` PARAFAC2 model to `tensor`.
pub fn parafac2_als(tensor: &IrregularTensor, opts: &AlsOptions) -> Result<AlsFit> {
    let r = opts.rank;
    let j = tensor.ncols();
    let limit = j.min(tensor.min_rows());
    if r == 0 || r > limit {
        return Err(Error::RankTooLarge { rank: r, limit });
    }
    if opts.iters == 0 {
        return Err(Error::InvalidArgument(
            "ALS needs at least one iteration".into(),
        ));
    }
    if let Some(s) = tensor
        .slices()
        .iter()
        .find(|s| s.rows.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Decomposition {
            slice: s.id.clone(),
            reason: "non-finite entries".into(),
        });
    }
    let mut best: Option<AlsFit> = None;
    for i in 0..opts.restarts.max(1) {
        let fit = fit_from(tensor, opts, opts.seed.wrapping_add(i as u64))?;
        if best
            .as_ref()
            .is_none_or(|b| fit.final_loss() < b.final_loss())
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

fn fit_from(tensor: &IrregularTensor, opts: &AlsOptions, seed: u64) -> Result<AlsFit> {
    let r = opts.rank;
    let j = tensor.ncols();
    let k_total = tensor.num_slices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array2::from_shape_simple_fn((j, r), || rng.gen::<f64>());
    let mut h = Array2::from_shape_simple_fn((r, r), || rng.gen::<f64>());
    let mut w = Array2::<f64>::ones((k_total, r));
    let slices = tensor.slices();

    let mut losses = Vec::with_capacity(opts.iters);
    let mut u = Vec::new();
    for _ in 0..opts.iters {
        let q = orthogonal_bases(tensor, &h, &w, &v, opts.mode)?;
        let y: Vec<Array2<f64>> = opts.mode.map(k_total, |k| q[k].t().dot(&slices[k].rows));

        let wtw = gram(w.view());
        let m1 = opts.mode.sum(k_total, (r, r), |k| {
            scale_columns(y[k].dot(&v).view(), w.row(k))
        });
        h = solve_sym_right(
            (&gram(v.view()) * &wtw).view(),
            m1.view(),
            "ALS update of H",
        )?;

        let m2 = opts.mode.sum(k_total, (j, r), |k| {
            scale_columns(y[k].t().dot(&h).view(), w.row(k))
        });
        v = solve_sym_right(
            (&gram(h.view()) * &wtw).view(),
            m2.view(),
            "ALS update of V",
        )?;

        let rows: Vec<Array1<f64>> = opts.mode.map(k_total, |k| {
            khatri_rao_contract(y[k].dot(&v).view(), h.view())
        });
        let mut m3 = Array2::zeros((k_total, r));
        for (k, row) in rows.into_iter().enumerate() {
            m3.row_mut(k).assign(&row);
        }
        w = solve_sym_right(
            (&gram(h.view()) * &gram(v.view())).view(),
            m3.view(),
            "ALS update of W",
        )?;

        u = q.iter().map(|qk| qk.dot(&h)).collect();
        let loss: f64 = opts
            .mode
            .map(k_total, |k| {
                let diff = &slices[k].rows - &reconstruct_rows(u[k].view(), w.row(k), v.view());
                diff.iter().map(|d| d * d).sum::<f64>()
            })
            .iter()
            .sum();
        let prev = losses.last().copied();
        losses.push(loss);
        if loss == 0.0 {
            break;
        }
        if let Some(prev) = prev {
            if ((prev - loss) / prev).abs() < opts.tol {
                break;
            }
        }
    }

    let factors = FactorSet {
        ids: slices.iter().map(|s| s.id.clone()).collect(),
        u: u.into_iter().map(RowBlocks::single).collect(),
        w,
        v,
    };
    Ok(AlsFit { factors, h, losses })
}
