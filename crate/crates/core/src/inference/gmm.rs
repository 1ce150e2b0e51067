use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, ModelConfig};
use crate::error::{GmedError, Result};
use crate::moments::{moments_for, NuisanceParams, TargetParams};
use crate::numerics::linalg::invert_symmetric;

/// `uᵀ W⁻¹ u` for a symmetric positive definite `W`.
pub fn quadratic_form(u: &DVector<f64>, weight: &DMatrix<f64>) -> Result<f64> {
    if weight.nrows() != u.len() || weight.ncols() != u.len() {
        return Err(GmedError::DimensionMismatch(format!(
            "weight matrix is {}x{} for {} moments",
            weight.nrows(),
            weight.ncols(),
            u.len()
        )));
    }
    let inv = invert_symmetric(weight).map_err(|_| GmedError::SingularWeight)?;
    Ok(u.dot(&(&inv.inverse * u)).max(0.0))
}

/// GMM criterion `E_n[U]ᵀ W⁻¹ E_n[U]` (not multiplied by `n`).
pub fn gmm_objective(
    data: &Dataset,
    beta: &TargetParams,
    gamma: &NuisanceParams,
    config: &ModelConfig,
    weight_matrix: &DMatrix<f64>,
) -> Result<f64> {
    let ev = moments_for(data, beta, gamma, config)?;
    quadratic_form(&ev.u_bar, weight_matrix)
}
