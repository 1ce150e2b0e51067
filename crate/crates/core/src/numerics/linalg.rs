//! Small dense linear-algebra helpers.
//!
//! Matrices here are tiny (a handful of confounders plus the target
//! parameters), so everything works on `nalgebra` dynamic matrices and
//! favours clarity over blocking.

use nalgebra::{DMatrix, DVector};

use crate::error::{GmedError, Result};

/// Relative pivot threshold for rank detection in Gram matrices.
pub const RANK_TOL: f64 = 1e-12;

/// Condition number above which a symmetric weight matrix gets a ridge.
pub const RIDGE_COND: f64 = 1e12;

/// Condition number above which a symmetric matrix is treated as singular.
pub const SINGULAR_COND: f64 = 1e15;

/// Cholesky factorisation with symmetric (diagonal) pivoting.
///
/// Factors `P A Pᵀ = L Lᵀ` and fails with `RankDeficient` as soon as the
/// next pivot falls below `RANK_TOL` times the first (largest) pivot.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    lower: DMatrix<f64>,
    perm: Vec<usize>,
}

impl PivotedCholesky {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(GmedError::DimensionMismatch(format!(
                "cholesky of a {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let mut work = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut first_pivot = 0.0;
        for k in 0..n {
            let (mut best, mut best_val) = (k, f64::NEG_INFINITY);
            for j in k..n {
                if work[(j, j)] > best_val {
                    best_val = work[(j, j)];
                    best = j;
                }
            }
            if k == 0 {
                first_pivot = best_val;
            }
            if !(best_val.is_finite()) || best_val <= RANK_TOL * first_pivot || best_val <= 0.0 {
                return Err(GmedError::RankDeficient { rank: k, columns: n });
            }
            if best != k {
                work.swap_rows(k, best);
                work.swap_columns(k, best);
                perm.swap(k, best);
            }
            let pivot = work[(k, k)].sqrt();
            work[(k, k)] = pivot;
            for i in (k + 1)..n {
                work[(i, k)] /= pivot;
            }
            // keep the whole trailing block current so later symmetric swaps stay valid
            for j in (k + 1)..n {
                let ljk = work[(j, k)];
                for i in (k + 1)..n {
                    work[(i, j)] -= work[(i, k)] * ljk;
                }
            }
        }
        let lower = DMatrix::from_fn(n, n, |i, j| if i >= j { work[(i, j)] } else { 0.0 });
        Ok(Self { lower, perm })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.perm.len();
        let permuted = DVector::from_fn(n, |i, _| rhs[self.perm[i]]);
        let y = self
            .lower
            .solve_lower_triangular(&permuted)
            .expect("cholesky factor has a positive diagonal");
        let z = self
            .lower
            .transpose()
            .solve_upper_triangular(&y)
            .expect("cholesky factor has a positive diagonal");
        let mut out = DVector::zeros(n);
        for i in 0..n {
            out[self.perm[i]] = z[i];
        }
        out
    }
}

/// Solves a general square system with full-pivot LU, flagging
/// numerically singular matrices.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = checked_lu(a)?;
    lu.solve(b).ok_or(GmedError::SingularJacobian)
}

/// Inverse of a general square matrix; `SingularJacobian` when singular.
pub fn invert_square(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = checked_lu(a)?;
    lu.try_inverse().ok_or(GmedError::SingularJacobian)
}

fn checked_lu(a: &DMatrix<f64>) -> Result<nalgebra::linalg::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if a.nrows() != a.ncols() {
        return Err(GmedError::DimensionMismatch(format!(
            "square solve on a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(GmedError::SingularJacobian);
    }
    let lu = a.clone().full_piv_lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..a.nrows()).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min <= max * 1e-14 {
        return Err(GmedError::SingularJacobian);
    }
    Ok(lu)
}

/// Result of inverting a symmetric positive (semi-)definite matrix.
#[derive(Debug, Clone)]
pub struct SymmetricInverse {
    pub inverse: DMatrix<f64>,
    pub condition: f64,
    pub ridged: bool,
}

/// Inverts a symmetric PSD matrix by eigendecomposition.
///
/// Numerically singular input (condition above `SINGULAR_COND`, or any
/// eigenvalue below `-1e-8` relative to the largest) is rejected with
/// `DegenerateCovariance`. Ill-conditioned input (condition above
/// `RIDGE_COND`) is regularised with `1e-10 * trace / k` on the diagonal.
pub fn invert_symmetric(a: &DMatrix<f64>) -> Result<SymmetricInverse> {
    let k = a.nrows();
    if k == 0 || a.ncols() != k {
        return Err(GmedError::DimensionMismatch("symmetric inverse needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(GmedError::DegenerateCovariance("non-finite entries".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 {
        return Err(GmedError::DegenerateCovariance("matrix is zero or negative".into()));
    }
    if min < -1e-8 * max.max(1.0) {
        return Err(GmedError::DegenerateCovariance(format!(
            "smallest eigenvalue {min:.3e} is negative"
        )));
    }
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > SINGULAR_COND {
        return Err(GmedError::DegenerateCovariance(format!(
            "condition number {condition:.3e} exceeds {SINGULAR_COND:.0e}"
        )));
    }
    let (values, ridged) = if condition > RIDGE_COND {
        let ridge = 1e-10 * sym.trace() / k as f64;
        (eig.eigenvalues.map(|v| v.max(0.0) + ridge), true)
    } else {
        (eig.eigenvalues.clone(), false)
    };
    let inv_diag = DMatrix::from_diagonal(&values.map(|v| 1.0 / v));
    let inverse = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok(SymmetricInverse { inverse, condition, ridged })
}

/// Weighted Gram matrix `Xᵀ diag(w) X` and cross product `Xᵀ diag(w) y`.
pub fn weighted_gram(
    design: &DMatrix<f64>,
    weights: &DVector<f64>,
    response: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = design.ncols();
    let mut scaled = design.clone();
    for j in 0..p {
        for (v, w) in scaled.column_mut(j).iter_mut().zip(weights.iter()) {
            *v *= w;
        }
    }
    let gram = design.transpose() * &scaled;
    let cross = scaled.transpose() * response;
    (gram, cross)
}
