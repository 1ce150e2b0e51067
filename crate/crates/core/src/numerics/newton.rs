use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linalg::solve_square;
use crate::error::{GmedError, Result};

/// Default Newton tolerance on the max-norm of the residual.
pub const NEWTON_TOL: f64 = 1e-8;

const MAX_HALVINGS: usize = 20;

/// Outcome of a Newton root solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSolveReport {
    pub solution: DVector<f64>,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

/// Central finite-difference Jacobian with step `max(1e-6, 1e-6·|xⱼ|)`.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..n {
        let h = (1e-6 * x[j].abs()).max(1e-6);
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += h;
        minus[j] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        let m = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), n));
        m.set_column(j, &col);
    }
    jac.unwrap_or_else(|| DMatrix::zeros(0, 0))
}

/// Damped Newton–Raphson for a square system `F(x) = 0`.
///
/// A full step that fails to lower `‖F‖₂` is halved up to 20 times. When no
/// trial step helps, or `max_iter` is reached, the report comes back with
/// `converged = false`; only a singular Jacobian is an error.
pub fn newton_solve<F>(
    residual_fn: F,
    jacobian_fn: Option<&dyn Fn(&DVector<f64>) -> DMatrix<f64>>,
    start: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<RootSolveReport>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = start.clone();
    let mut fx = residual_fn(&x);
    if fx.len() != x.len() {
        return Err(GmedError::DimensionMismatch(format!(
            "residual has length {} for {} unknowns",
            fx.len(),
            x.len()
        )));
    }
    let report = |x: DVector<f64>, fx: &DVector<f64>, iterations: usize| {
        let norm = if fx.iter().all(|v| v.is_finite()) { fx.amax() } else { f64::INFINITY };
        RootSolveReport { solution: x, iterations, final_residual_norm: norm, converged: norm <= tol }
    };

    for iter in 0..max_iter {
        if fx.iter().all(|v| v.is_finite()) && fx.amax() <= tol {
            return Ok(report(x, &fx, iter));
        }
        let jac = match jacobian_fn {
            Some(j) => j(&x),
            None => finite_difference_jacobian(&residual_fn, &x),
        };
        let step = solve_square(&jac, &(-&fx))?;
        let current = fx.norm();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &x + &step * scale;
            let ft = residual_fn(&trial);
            let norm = ft.norm();
            if norm.is_finite() && norm < current {
                accepted = Some((trial, ft));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((nx, nf)) => {
                x = nx;
                fx = nf;
            }
            None => return Ok(report(x, &fx, iter)),
        }
    }
    Ok(report(x, &fx, max_iter))
}
