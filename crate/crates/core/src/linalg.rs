//! Small dense kernels shared by the static and streaming solvers.
//!
//! Factor matrices live in `ndarray`; the handful of factorizations we need
//! (Cholesky, LU, thin SVD) are delegated to `nalgebra` on R × R or I × R
//! operands, so the conversion cost stays linear in the data touched.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Relative ridge added to every Gram-type left-hand side before solving.
pub const RIDGE: f64 = 1e-10;

/// Iterative-refinement passes applied after each ridged solve.
const REFINE_STEPS: usize = 3;

fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn ridged(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mean_diag = if n == 0 {
        0.0
    } else {
        a.diag().sum() / n as f64
    };
    let mut m = to_na(a);
    if mean_diag.is_finite() && mean_diag > 0.0 {
        let shift = RIDGE * mean_diag;
        for i in 0..n {
            m[(i, i)] += shift;
        }
    }
    m
}

/// Inverse of the ridged `A`, by Cholesky or, failing that, LU.
fn ridged_inverse(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let lhs = ridged(a);
    let inv = match lhs.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => lhs.lu().try_inverse()?,
    };
    // column-major buffer read row-major is the transpose
    let inv_t = Array2::from_shape_vec((n, n), inv.as_slice().to_vec()).ok()?;
    Some(inv_t.reversed_axes())
}

/// Squared residual norm below which refinement cannot improve a solve
/// with an `n`-term inner dimension.
fn rounding_floor(n: usize, rhs_sq_norm: f64) -> f64 {
    let eps = n as f64 * f64::EPSILON;
    eps * eps * rhs_sq_norm
}

fn sq_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// A symmetric (R × R) Gram-type matrix prepared for repeated right-hand
/// solves `X · A = B`.
///
/// A relative ridge of [`RIDGE`] is applied to `A`, followed by a few
/// refinement passes against the unshifted `A`.
#[derive(Debug, Clone)]
pub struct SymSolver {
    a: Array2<f64>,
    inv: Array2<f64>,
    what: &'static str,
}

impl SymSolver {
    pub fn new(a: ArrayView2<'_, f64>, what: &'static str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!(
                "{what}: A {:?} is not square",
                a.dim()
            )));
        }
        let inv = ridged_inverse(a).ok_or(Error::Singular(what))?;
        Ok(Self {
            a: a.to_owned(),
            inv,
            what,
        })
    }

    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (a, inv, what) = (&self.a, &self.inv, self.what);
        if b.ncols() != a.nrows() {
            return Err(Error::Shape(format!(
                "{what}: cannot solve X·A = B with A {:?} and B {:?}",
                a.dim(),
                b.dim()
            )));
        }
        let mut x = b.dot(inv);
        // refinement against the unshifted matrix removes the ridge bias
        // whenever A itself is well posed
        let mut residual = &b - &x.dot(a);
        let mut res_norm = sq_norm(&residual);
        let floor = rounding_floor(a.nrows(), b.iter().map(|v| v * v).sum());
        for _ in 0..REFINE_STEPS {
            if res_norm <= floor {
                break;
            }
            let candidate = &x + &residual.dot(inv);
            let next = &b - &candidate.dot(a);
            let next_norm = sq_norm(&next);
            if next_norm.is_nan() || next_norm >= res_norm {
                break;
            }
            x = candidate;
            residual = next;
            // less than a halving of the residual means rounding noise
            let stalled = next_norm > 0.25 * res_norm;
            res_norm = next_norm;
            if stalled {
                break;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(what));
        }
        Ok(x)
    }
}

/// Solves `X · A = B` for `X` where `A` is a symmetric (R × R) Gram-type
/// matrix; see [`SymSolver`].
pub fn solve_sym_right(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    what: &'static str,
) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() || b.ncols() != a.nrows() {
        return Err(Error::Shape(format!(
            "{what}: cannot solve X·A = B with A {:?} and B {:?}",
            a.dim(),
            b.dim()
        )));
    }
    SymSolver::new(a, what)?.solve(b)
}

/// Solves the row-vector system `w · A = bᵀ` for symmetric `A`, with the
/// same ridge and refinement as [`SymSolver`].
pub fn solve_sym_row(
    a: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    what: &'static str,
) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Shape(format!(
            "{what}: cannot solve w·A = b with A {:?} and b of length {}",
            a.dim(),
            b.len()
        )));
    }
    // the row-major buffer read column-major is Aᵀ, and w·A = bᵀ is Aᵀ·w = b
    let exact = match a.as_slice() {
        Some(buf) => DMatrix::from_column_slice(n, n, buf),
        None => DMatrix::from_fn(n, n, |i, j| a[[j, i]]),
    };
    let mut lhs = exact.clone();
    let mean_diag = if n == 0 { 0.0 } else { lhs.trace() / n as f64 };
    if mean_diag.is_finite() && mean_diag > 0.0 {
        for i in 0..n {
            lhs[(i, i)] += RIDGE * mean_diag;
        }
    }
    let rhs = DVector::from_iterator(n, b.iter().copied());
    let chol = lhs.clone().cholesky();
    let lu = if chol.is_none() { Some(lhs.lu()) } else { None };
    let solve = |r: &DVector<f64>| match (&chol, &lu) {
        (Some(c), _) => Some(c.solve(r)),
        (None, Some(l)) => l.solve(r),
        (None, None) => None,
    };
    let mut x = solve(&rhs).ok_or(Error::Singular(what))?;
    let mut residual = &rhs - &exact * &x;
    let mut res_norm = residual.norm_squared();
    let floor = rounding_floor(n, rhs.norm_squared());
    for _ in 0..REFINE_STEPS {
        if res_norm <= floor {
            break;
        }
        let Some(step) = solve(&residual) else { break };
        let candidate = &x + step;
        let next = &rhs - &exact * &candidate;
        let next_norm = next.norm_squared();
        if next_norm.is_nan() || next_norm >= res_norm {
            break;
        }
        x = candidate;
        residual = next;
        let stalled = next_norm > 0.25 * res_norm;
        res_norm = next_norm;
        if stalled {
            break;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what));
    }
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Column-orthonormal polar factor `P·Zᵀ` of the thin SVD `A = P·Σ·Zᵀ`.
///
/// This is the maximizer of `tr(Qᵀ A)` over column-orthonormal `Q`.
/// Returns `None` when `A` has fewer rows than columns or the SVD produced
/// non-finite output.
pub fn polar_factor(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    if a.nrows() < a.ncols() || a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let svd = to_na(a).try_svd(true, true, f64::EPSILON, 10_000)?;
    let q = svd.u? * svd.v_t?;
    let q = from_na(&q);
    q.iter().all(|v| v.is_finite()).then_some(q)
}

/// `Aᵀ·A`.
pub fn gram(a: ArrayView2<'_, f64>) -> Array2<f64> {
    a.t().dot(&a)
}

/// Column sums of `U ∘ (X·V)`, i.e. `Σ_{i,j} X(i,j)·U(i,r)·V(j,r)` given
/// the precomputed product `X·V`. Equivalent to `vec(X)ᵀ (V ⊙ U)`.
pub fn khatri_rao_contract(xv: ArrayView2<'_, f64>, u: ArrayView2<'_, f64>) -> Array1<f64> {
    (&xv * &u).sum_axis(Axis(0))
}

/// Replaces `M` with `(M + Mᵀ)/2` and returns the largest asymmetry seen.
pub fn symmetrize(m: &mut Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[[i, j]], m[[j, i]]);
            worst = worst.max((a - b).abs());
            let avg = 0.5 * (a + b);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    worst
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `A · diag(d)`.
pub fn scale_columns(a: ArrayView2<'_, f64>, d: ArrayView1<'_, f64>) -> Array2<f64> {
    &a * &d.insert_axis(Axis(0))
}

/// `diag(d) · A · diag(d)` for square `A`.
pub fn scale_both(a: ArrayView2<'_, f64>, d: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    out *= &d.insert_axis(Axis(1));
    out *= &d.insert_axis(Axis(0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn solve_right_matches_known_solution() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let x_true = array![[1.0, -2.0], [0.5, 0.25], [3.0, 0.0]];
        let b = x_true.dot(&a);
        let x = solve_sym_right(a.view(), b.view(), "test").unwrap();
        for (p, q) in x.iter().zip(x_true.iter()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_matrix_is_singular() {
        let a = Array2::<f64>::zeros((2, 2));
        let b = array![[1.0, 1.0]];
        assert!(matches!(
            solve_sym_right(a.view(), b.view(), "zero"),
            Err(Error::Singular("zero"))
        ));
    }

    #[test]
    fn polar_factor_is_orthonormal() {
        let a = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.0, 0.0]];
        let q = polar_factor(a.view()).unwrap();
        let qtq = gram(q.view());
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(qtq[[i, j]], e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn polar_factor_rejects_wide_input() {
        let a = array![[1.0, 2.0, 3.0]];
        assert!(polar_factor(a.view()).is_none());
    }

    #[test]
    fn khatri_rao_contract_matches_loops() {
        let x = array![[1.0, 2.0, 0.0], [-1.0, 0.5, 3.0]];
        let u = array![[0.3, 1.0], [2.0, -0.5]];
        let v = array![[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0]];
        let got = khatri_rao_contract(x.dot(&v).view(), u.view());
        for r in 0..2 {
            let mut want = 0.0;
            for i in 0..2 {
                for j in 0..3 {
                    want += x[[i, j]] * u[[i, r]] * v[[j, r]];
                }
            }
            assert_abs_diff_eq!(got[r], want, epsilon = 1e-14);
        }
    }

    #[test]
    fn symmetrize_reports_asymmetry() {
        let mut m = array![[1.0, 2.0], [2.5, 1.0]];
        let worst = symmetrize(&mut m);
        assert_abs_diff_eq!(worst, 0.5);
        assert_eq!(m[[0, 1]], m[[1, 0]]);
    }
}
