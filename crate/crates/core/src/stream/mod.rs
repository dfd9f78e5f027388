//! Dual-way streaming PARAFAC2 updates.
//!
//! Old data is never revisited. Four helper summaries carry everything the
//! update rules need from it, each decayed by the forgetting factor `λ`:
//!
//! * `c_k = λ·c_k + vec(X_new)ᵀ (V ⊙ U_new)` and `D_k = λ·D_k + U_newᵀ U_new`,
//!   updated only when slice `k` receives rows;
//! * `F = λ·F + Σ_k X_newᵀ U_new S_k` and `G = λ·G + Σ_k S_k U_newᵀ U_new S_k`,
//!   updated on every batch.
//!
//! One update runs three steps in order: new row factors `U_new` for every
//! slice in the batch against the current `V` and `S_k`, then the slice
//! weights `W(k,:)` from `c_k` and `D_k`, and finally `V` from `F` and `G`.
//! Every step costs `O(J·R·Σ I_new)` plus per-slice `R × R` solves.

pub mod checkpoint;

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::linalg::{
    gram, khatri_rao_contract, scale_both, scale_columns, solve_sym_right, solve_sym_row,
    symmetrize, SymSolver,
};
use crate::parafac2::{FactorSet, RowBlocks};
use crate::tensor::{IrregularTensor, UpdateBatch};

/// Forgetting factor used when none is given.
pub const DEFAULT_LAMBDA: f64 = 0.7;

/// λ-weighted summaries of all data ingested so far.
///
/// `c` and `d` are aligned with the slice order of the accompanying
/// [`FactorSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelperState {
    pub c: Vec<Array1<f64>>,
    pub d: Vec<Array2<f64>>,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub lambda: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "forgetting factor must lie in [0, 1], got {lambda}"
        )))
    }
}

/// Helper summaries of the initial tensor under fitted `factors`.
pub fn init_helpers(
    tensor: &IrregularTensor,
    factors: &FactorSet,
    lambda: f64,
) -> Result<HelperState> {
    check_lambda(lambda)?;
    factors.validate()?;
    let (j, r) = (tensor.ncols(), factors.rank());
    if factors.v.nrows() != j || factors.num_slices() != tensor.num_slices() {
        return Err(Error::Shape(format!(
            "factors cover {} slices × {} columns, tensor has {} × {j}",
            factors.num_slices(),
            factors.v.nrows(),
            tensor.num_slices()
        )));
    }
    let mut c = Vec::with_capacity(tensor.num_slices());
    let mut d = Vec::with_capacity(tensor.num_slices());
    let mut f = Array2::zeros((j, r));
    let mut g = Array2::zeros((r, r));
    for (k, slice) in tensor.slices().iter().enumerate() {
        if factors.ids[k] != slice.id {
            return Err(Error::Shape(format!(
                "factor slice {k} is `{}` but tensor slice is `{}`",
                factors.ids[k], slice.id
            )));
        }
        let u = factors.u[k].to_matrix();
        if u.nrows() != slice.nrows() {
            return Err(Error::Shape(format!(
                "U of slice `{}` has {} rows, slice has {}",
                slice.id,
                u.nrows(),
                slice.nrows()
            )));
        }
        let s = factors.w.row(k);
        let utu = gram(u.view());
        c.push(khatri_rao_contract(
            slice.rows.dot(&factors.v).view(),
            u.view(),
        ));
        f += &scale_columns(slice.rows.t().dot(&u).view(), s);
        g += &scale_both(utu.view(), s);
        d.push(utu);
    }
    symmetrize(&mut g);
    Ok(HelperState { c, d, f, g, lambda })
}

/// New row factors: solves `U_new (S_k VᵀV S_k) = X_new V S_k`.
pub fn update_u_new(
    x_new: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    s_k: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    check_update_shapes(x_new, v, s_k)?;
    u_new_from(x_new.dot(&v).view(), gram(v).view(), s_k)
}

fn check_update_shapes(
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    s: ArrayView1<'_, f64>,
) -> Result<()> {
    if x.nrows() == 0 || x.ncols() != v.nrows() || s.len() != v.ncols() {
        return Err(Error::Shape(format!(
            "X_new {:?}, V {:?}, s_k of length {}",
            x.dim(),
            v.dim(),
            s.len()
        )));
    }
    Ok(())
}

fn u_new_from(
    xv: ArrayView2<'_, f64>,
    vtv: ArrayView2<'_, f64>,
    s: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    solve_sym_right(
        scale_both(vtv, s).view(),
        scale_columns(xv, s).view(),
        "row factor update",
    )
}

/// Weights spread over at most this ratio are divided out of a shared
/// `VᵀV` solve, using `(S·VᵀV·S)⁻¹ = S⁻¹ (VᵀV)⁻¹ S⁻¹`, instead of forming
/// `S·VᵀV·S` per slice.
const WEIGHT_SPREAD: f64 = 1e6;

fn shared_weights_ok(s: ArrayView1<'_, f64>) -> bool {
    let (lo, hi) = s.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), x| {
        (lo.min(x.abs()), hi.max(x.abs()))
    });
    lo > 0.0 && hi <= WEIGHT_SPREAD * lo
}

impl HelperState {
    /// `(λ·c_old + vec(X_new)ᵀ (V ⊙ U_new), λ·D_old + U_newᵀ U_new)` for the
    /// slice at `slot`; `None` marks a slice without prior helpers.
    pub fn accumulate_cd(
        &self,
        slot: Option<usize>,
        x_new: ArrayView2<'_, f64>,
        u_new: ArrayView2<'_, f64>,
        v: ArrayView2<'_, f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        if x_new.nrows() != u_new.nrows()
            || x_new.ncols() != v.nrows()
            || u_new.ncols() != v.ncols()
        {
            return Err(Error::Shape(format!(
                "X_new {:?}, U_new {:?}, V {:?}",
                x_new.dim(),
                u_new.dim(),
                v.dim()
            )));
        }
        let fresh_c = khatri_rao_contract(x_new.dot(&v).view(), u_new);
        Ok(self.fold_cd(slot, fresh_c, gram(u_new)))
    }

    fn fold_cd(
        &self,
        slot: Option<usize>,
        mut c: Array1<f64>,
        mut d: Array2<f64>,
    ) -> (Array1<f64>, Array2<f64>) {
        if let Some(k) = slot {
            c.scaled_add(self.lambda, &self.c[k]);
            d.scaled_add(self.lambda, &self.d[k]);
        }
        symmetrize(&mut d);
        (c, d)
    }

    /// `(λ·F_old + Σ X_newᵀ U_new S_k, λ·G_old + Σ S_k U_newᵀ U_new S_k)`
    /// over `(X_new, U_new, s_k)` triples, with `s_k` the already-updated
    /// slice weights.
    pub fn accumulate_fg(
        &self,
        contributions: &[(
            ArrayView2<'_, f64>,
            ArrayView2<'_, f64>,
            ArrayView1<'_, f64>,
        )],
        mode: ExecMode,
    ) -> (Array2<f64>, Array2<f64>) {
        let (j, r) = self.f.dim();
        let f_sum = mode.sum(contributions.len(), (j, r), |i| {
            let (x, u, s) = contributions[i];
            scale_columns(x.t().dot(&u).view(), s)
        });
        let g_sum = mode.sum(contributions.len(), (r, r), |i| {
            let (_, u, s) = contributions[i];
            scale_both(gram(u).view(), s)
        });
        self.fold_fg(f_sum, g_sum)
    }

    fn fold_fg(&self, mut f: Array2<f64>, mut g: Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        f.scaled_add(self.lambda, &self.f);
        g.scaled_add(self.lambda, &self.g);
        symmetrize(&mut g);
        (f, g)
    }
}

/// Slice weights: solves `w · (VᵀV ∘ D_new) = c_newᵀ`.
pub fn update_s_row(
    c_new: ArrayView1<'_, f64>,
    d_new: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    s_row_from(c_new, d_new, gram(v).view())
}

fn s_row_from(
    c: ArrayView1<'_, f64>,
    d: ArrayView2<'_, f64>,
    vtv: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    if c.len() != d.nrows() || d.dim() != vtv.dim() {
        return Err(Error::Shape(format!(
            "c of length {}, D {:?}, VᵀV {:?}",
            c.len(),
            d.dim(),
            vtv.dim()
        )));
    }
    solve_sym_row((&vtv * &d).view(), c, "slice weight update")
}

/// Shared factor: solves `V · G_new = F_new`.
pub fn update_v(f_new: ArrayView2<'_, f64>, g_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    solve_sym_right(g_new, f_new, "shared factor update")
}

/// Factors, helpers and the number of updates applied so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub factors: FactorSet,
    pub helpers: HelperState,
    pub update_index: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateOptions {
    pub mode: ExecMode,
    /// Passes of the three-step update over the same batch.
    pub passes: usize,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self {
            mode: ExecMode::Deterministic,
            passes: 1,
        }
    }
}

/// Slots touched by one update, in batch order (existing rows first).
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub slots: Vec<usize>,
    pub new_slices: usize,
}

impl UpdateOutcome {
    /// `(slice id, U_new)` for every slice in the batch.
    pub fn u_new<'a>(
        &'a self,
        state: &'a StreamState,
    ) -> impl Iterator<Item = (&'a str, &'a Array2<f64>)> {
        self.slots
            .iter()
            .map(|&k| (state.factors.ids[k].as_str(), state.factors.u[k].last()))
    }
}

struct SliceStep {
    u: Array2<f64>,
    c: Array1<f64>,
    d: Array2<f64>,
    fresh_d: Array2<f64>,
    w: Array1<f64>,
}

impl StreamState {
    pub fn new(factors: FactorSet, helpers: HelperState) -> Result<Self> {
        factors.validate()?;
        if helpers.c.len() != factors.num_slices() || helpers.d.len() != factors.num_slices() {
            return Err(Error::Shape(
                "helpers and factors cover different slices".into(),
            ));
        }
        let mut state = Self {
            factors,
            helpers,
            update_index: 0,
            index: HashMap::new(),
        };
        state.rebuild_index();
        Ok(state)
    }

    /// Fitted factors plus helper summaries of the initial tensor.
    pub fn initialize(tensor: &IrregularTensor, factors: FactorSet, lambda: f64) -> Result<Self> {
        let helpers = init_helpers(tensor, &factors, lambda)?;
        Self::new(factors, helpers)
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .factors
            .ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.clone(), k))
            .collect();
    }

    pub fn slot(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn lambda(&self) -> f64 {
        self.helpers.lambda
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn ncols(&self) -> usize {
        self.factors.v.nrows()
    }

    /// Consumes one batch. On error the state is left unchanged.
    pub fn update(&mut self, batch: &UpdateBatch, opts: &UpdateOptions) -> Result<UpdateOutcome> {
        dash_update(self, batch, opts)
    }
}

/// Applies one batch to `state`: row factors, then slice weights, then the
/// shared factor. Slices absent from the batch keep their factors and their
/// `c_k`, `D_k` untouched; `F` and `G` decay on every call.
pub fn dash_update(
    state: &mut StreamState,
    batch: &UpdateBatch,
    opts: &UpdateOptions,
) -> Result<UpdateOutcome> {
    let prepared = prepare_update(state, batch, opts)?;
    Ok(state.commit(prepared))
}

/// The outcome of one update computed against a state but not yet applied.
/// Commit it with [`StreamState::commit`] to the same, unchanged state.
#[derive(Debug, Clone)]
pub struct PreparedUpdate {
    slots: Vec<Option<usize>>,
    ids: Vec<String>,
    steps: Vec<PreparedSlice>,
    f: Array2<f64>,
    g: Array2<f64>,
    v: Array2<f64>,
}

#[derive(Debug, Clone)]
struct PreparedSlice {
    u: Array2<f64>,
    c: Array1<f64>,
    d: Array2<f64>,
    w: Array1<f64>,
}

/// Computes one update without touching `state`; see [`dash_update`].
pub fn prepare_update(
    state: &StreamState,
    batch: &UpdateBatch,
    opts: &UpdateOptions,
) -> Result<PreparedUpdate> {
    batch.validate()?;
    if opts.passes == 0 {
        return Err(Error::InvalidArgument(
            "at least one update pass is required".into(),
        ));
    }
    let (j, r) = (state.ncols(), state.rank());
    if batch.ncols() != Some(j) {
        return Err(Error::Shape(format!(
            "batch has {:?} columns, factors expect {j}",
            batch.ncols()
        )));
    }
    let mut slots = Vec::with_capacity(batch.existing_rows.len());
    for s in &batch.existing_rows {
        slots.push(Some(
            state
                .slot(&s.id)
                .ok_or_else(|| Error::UnknownSlice(s.id.clone()))?,
        ));
    }
    for s in &batch.new_slices {
        if state.slot(&s.id).is_some() {
            return Err(Error::DuplicateSlice(s.id.clone()));
        }
        slots.push(None);
    }
    let entries: Vec<_> = batch.slices().collect();
    let mode = opts.mode;
    let helpers = &state.helpers;

    // brand-new slices start from S_k = I
    let mut w_rows: Vec<Array1<f64>> = slots
        .iter()
        .map(|slot| match slot {
            Some(k) => state.factors.w.row(*k).to_owned(),
            None => Array1::ones(r),
        })
        .collect();
    let mut v = state.factors.v.clone();
    let mut steps: Vec<SliceStep> = Vec::new();
    let mut f_g = (Array2::zeros((j, r)), Array2::zeros((r, r)));

    // all new rows stacked, so row-proportional products run as one call
    let mut offsets = Vec::with_capacity(entries.len() + 1);
    offsets.push(0);
    for e in &entries {
        offsets.push(offsets.last().copied().unwrap_or(0) + e.nrows());
    }
    let blocks: Vec<_> = entries.iter().map(|e| e.rows.view()).collect();
    let x_all = ndarray::concatenate(Axis(0), &blocks)
        .map_err(|e| Error::Shape(format!("stacking batch rows: {e}")))?;
    let rows_of = |i: usize| s![offsets[i]..offsets[i + 1], ..];

    for _ in 0..opts.passes {
        let vtv = gram(v.view());
        let xv_all = x_all.dot(&v);
        let shared = SymSolver::new(vtv.view(), "row factor update").ok();
        let y_all = match &shared {
            Some(solver) => Some(solver.solve(xv_all.view())?),
            None => None,
        };
        steps = mode.try_map(entries.len(), |i| {
            let xv = xv_all.slice(rows_of(i));
            let w_old = w_rows[i].view();
            let u = match &y_all {
                Some(y) if shared_weights_ok(w_old) => {
                    scale_columns(y.slice(rows_of(i)), w_old.mapv(f64::recip).view())
                }
                _ => u_new_from(xv, vtv.view(), w_old).map_err(|e| e.in_slice(&entries[i].id))?,
            };
            let fresh_d = gram(u.view());
            let (c, d) =
                helpers.fold_cd(slots[i], khatri_rao_contract(xv, u.view()), fresh_d.clone());
            // a slice with no signal so far (all-zero rows) keeps its weights
            let w = if d.iter().all(|&x| x == 0.0) {
                w_rows[i].clone()
            } else {
                s_row_from(c.view(), d.view(), vtv.view())
                    .map_err(|e| e.in_slice(&entries[i].id))?
            };
            Ok::<_, Error>(SliceStep {
                u,
                c,
                d,
                fresh_d,
                w,
            })
        })?;

        let mut us_all = Array2::zeros((x_all.nrows(), r));
        for (i, st) in steps.iter().enumerate() {
            let mut block = us_all.slice_mut(rows_of(i));
            block.assign(&st.u);
            block *= &st.w.view().insert_axis(Axis(0));
        }
        let f_sum = x_all.t().dot(&us_all);
        let g_sum = mode.sum(entries.len(), (r, r), |i| {
            scale_both(steps[i].fresh_d.view(), steps[i].w.view())
        });
        f_g = helpers.fold_fg(f_sum, g_sum);
        v = update_v(f_g.0.view(), f_g.1.view())?;
        w_rows = steps.iter().map(|st| st.w.clone()).collect();
    }

    let (f, g) = f_g;
    Ok(PreparedUpdate {
        slots,
        ids: entries.iter().map(|e| e.id.clone()).collect(),
        steps: steps
            .into_iter()
            .map(|st| PreparedSlice {
                u: st.u,
                c: st.c,
                d: st.d,
                w: st.w,
            })
            .collect(),
        f,
        g,
        v,
    })
}

impl StreamState {
    /// Applies an update prepared against this state.
    pub fn commit(&mut self, prepared: PreparedUpdate) -> UpdateOutcome {
        let PreparedUpdate {
            slots,
            ids,
            steps,
            f,
            g,
            v,
        } = prepared;
        let new_slices = slots.iter().filter(|s| s.is_none()).count();
        let mut touched = Vec::with_capacity(steps.len());
        for ((id, slot), step) in ids.into_iter().zip(slots).zip(steps) {
            let k = match slot {
                Some(k) => {
                    self.factors.u[k].push(step.u);
                    self.factors.w.row_mut(k).assign(&step.w);
                    self.helpers.c[k] = step.c;
                    self.helpers.d[k] = step.d;
                    k
                }
                None => {
                    let k = self.factors.ids.len();
                    self.factors.ids.push(id.clone());
                    self.factors.u.push(RowBlocks::single(step.u));
                    self.factors
                        .w
                        .push_row(step.w.view())
                        .expect("weight row has rank entries");
                    self.helpers.c.push(step.c);
                    self.helpers.d.push(step.d);
                    self.index.insert(id, k);
                    k
                }
            };
            touched.push(k);
        }
        self.helpers.f = f;
        self.helpers.g = g;
        self.factors.v = v;
        self.update_index += 1;
        UpdateOutcome {
            slots: touched,
            new_slices,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SliceMatrix;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};

    fn outer(u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
        u.clone()
            .insert_axis(Axis(1))
            .dot(&v.clone().insert_axis(Axis(0)))
    }

    fn rank_one_state() -> (IrregularTensor, FactorSet) {
        let u = array![1.0, 2.0, -1.0];
        let v = array![0.5, 1.0, 2.0, -1.0];
        let t = IrregularTensor::new(vec![SliceMatrix::new("a", outer(&u, &v), 0)]).unwrap();
        let f = FactorSet {
            ids: vec!["a".into()],
            u: vec![RowBlocks::single(u.insert_axis(Axis(1)))],
            w: array![[1.0]],
            v: v.insert_axis(Axis(1)),
        };
        (t, f)
    }

    #[test]
    fn rank_one_helpers_by_hand() {
        let (t, f) = rank_one_state();
        let h = init_helpers(&t, &f, 0.7).unwrap();
        // uᵀu = 6, vᵀv = 6.25
        assert_abs_diff_eq!(h.c[0][0], 6.0 * 6.25, epsilon = 1e-12);
        assert_abs_diff_eq!(h.d[0][[0, 0]], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.g[[0, 0]], 6.0, epsilon = 1e-12);
        let v = f.v.column(0);
        for j in 0..4 {
            assert_abs_diff_eq!(h.f[[j, 0]], 6.0 * v[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_tensor_helpers() {
        let (_, f) = rank_one_state();
        let t =
            IrregularTensor::new(vec![SliceMatrix::new("a", Array2::zeros((3, 4)), 0)]).unwrap();
        let h = init_helpers(&t, &f, 0.7).unwrap();
        assert!(h.c[0].iter().all(|&x| x == 0.0));
        assert!(h.f.iter().all(|&x| x == 0.0));
        assert_abs_diff_eq!(h.d[0][[0, 0]], 6.0);
        assert_abs_diff_eq!(h.g[[0, 0]], 6.0);
    }

    #[test]
    fn init_helpers_rejects_mismatched_rows() {
        let (_, f) = rank_one_state();
        let t =
            IrregularTensor::new(vec![SliceMatrix::new("a", Array2::zeros((2, 4)), 0)]).unwrap();
        assert!(matches!(init_helpers(&t, &f, 0.7), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_factors_return_data() {
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]];
        let u = update_u_new(x.view(), Array2::eye(3).view(), Array1::ones(3).view()).unwrap();
        for (a, b) in u.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_component_weight_is_scalar_division() {
        let c = array![3.0];
        let d = array![[2.0]];
        let v = array![[1.0], [2.0]];
        let w = update_s_row(c.view(), d.view(), v.view()).unwrap();
        assert_abs_diff_eq!(w[0], 3.0 / (5.0 * 2.0), epsilon = 1e-9);
    }

    #[test]
    fn zero_c_gives_zero_weights() {
        let d = array![[2.0, 0.5], [0.5, 1.0]];
        let v = array![[1.0, 0.0], [0.3, 1.0], [0.0, 2.0]];
        let w = update_s_row(Array1::zeros(2).view(), d.view(), v.view()).unwrap();
        assert!(w.iter().all(|x| x.abs() < 1e-300));
    }

    #[test]
    fn identity_gram_returns_f() {
        let f = array![[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]];
        let v = update_v(f.view(), Array2::eye(2).view()).unwrap();
        for (a, b) in v.iter().zip(f.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn fresh_slice_terms_ignore_lambda() {
        let (t, f) = rank_one_state();
        let h = init_helpers(&t, &f, 0.7).unwrap();
        let x = array![[1.0, 0.0, 2.0, 1.0]];
        let u = array![[0.5]];
        let (c, d) = h
            .accumulate_cd(None, x.view(), u.view(), f.v.view())
            .unwrap();
        let want_c: f64 = (0..4).map(|j| x[[0, j]] * 0.5 * f.v[[j, 0]]).sum();
        assert_abs_diff_eq!(c[0], want_c, epsilon = 1e-14);
        assert_abs_diff_eq!(d[[0, 0]], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn full_forgetting_keeps_only_fresh_terms() {
        let (t, f) = rank_one_state();
        let h = init_helpers(&t, &f, 0.0).unwrap();
        let x = array![[1.0, 0.0, 2.0, 1.0]];
        let u = array![[0.5]];
        let with_prior = h
            .accumulate_cd(Some(0), x.view(), u.view(), f.v.view())
            .unwrap();
        let without = h
            .accumulate_cd(None, x.view(), u.view(), f.v.view())
            .unwrap();
        assert_eq!(with_prior, without);
    }

    #[test]
    fn empty_contribution_list_only_decays() {
        let (t, f) = rank_one_state();
        let h = init_helpers(&t, &f, 0.7).unwrap();
        let (fnew, gnew) = h.accumulate_fg(&[], ExecMode::Deterministic);
        assert_eq!(fnew, &h.f * 0.7);
        assert_eq!(gnew, &h.g * 0.7);
    }

    #[test]
    fn rank_one_fg_contribution() {
        let (t, f) = rank_one_state();
        let h = init_helpers(&t, &f, 0.5).unwrap();
        let x = array![[2.0, 0.0, 1.0, 1.0]];
        let u = array![[3.0]];
        let s = array![2.0];
        let (fnew, gnew) =
            h.accumulate_fg(&[(x.view(), u.view(), s.view())], ExecMode::Deterministic);
        for j in 0..4 {
            assert_abs_diff_eq!(
                fnew[[j, 0]],
                0.5 * h.f[[j, 0]] + x[[0, j]] * 3.0 * 2.0,
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(gnew[[0, 0]], 0.5 * 6.0 + 2.0 * 9.0 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn new_slice_extends_state() {
        let (t, f) = rank_one_state();
        let mut state = StreamState::initialize(&t, f, 0.7).unwrap();
        let before = state.clone();
        let batch = UpdateBatch {
            update_index: 1,
            existing_rows: vec![],
            new_slices: vec![SliceMatrix::new(
                "b",
                array![[1.0, 2.0, 4.0, -2.0], [0.5, 1.0, 2.0, -1.0]],
                3,
            )],
            cycle_span: (3, 4),
        };
        let out = state.update(&batch, &UpdateOptions::default()).unwrap();
        assert_eq!(out.slots, vec![1]);
        assert_eq!(state.factors.ids, vec!["a", "b"]);
        assert_eq!(state.factors.u[1].nrows(), 2);
        assert_eq!(state.factors.w.nrows(), 2);
        assert_eq!(state.helpers.c.len(), 2);
        assert_eq!(state.factors.u[0], before.factors.u[0]);
        assert_eq!(state.helpers.c[0], before.helpers.c[0]);
        assert_eq!(state.update_index, 1);
        assert_eq!(state.slot("b"), Some(1));
    }

    #[test]
    fn unknown_existing_slice_is_rejected_without_mutation() {
        let (t, f) = rank_one_state();
        let mut state = StreamState::initialize(&t, f, 0.7).unwrap();
        let before = state.clone();
        let batch = UpdateBatch {
            update_index: 1,
            existing_rows: vec![SliceMatrix::new("zzz", Array2::ones((1, 4)), 3)],
            new_slices: vec![],
            cycle_span: (3, 3),
        };
        assert!(matches!(
            state.update(&batch, &UpdateOptions::default()),
            Err(Error::UnknownSlice(id)) if id == "zzz"
        ));
        assert_eq!(state, before);
    }

    #[test]
    fn solver_failure_names_the_slice() {
        let (t, mut f) = rank_one_state();
        f.w = array![[0.0]];
        let mut state = StreamState::initialize(&t, f, 0.7).unwrap();
        let batch = UpdateBatch {
            update_index: 1,
            existing_rows: vec![SliceMatrix::new("a", Array2::ones((1, 4)), 3)],
            new_slices: vec![],
            cycle_span: (3, 3),
        };
        let err = state.update(&batch, &UpdateOptions::default()).unwrap_err();
        assert!(
            matches!(err, Error::Slice { ref slice, .. } if slice == "a"),
            "{err}"
        );
    }
}
