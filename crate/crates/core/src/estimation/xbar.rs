use nalgebra::DVector;

use super::gest::GEstimate;
use crate::data::Dataset;
use crate::error::{GmedError, Result};
use crate::moments::targets;

/// Mediator residuals `M − β̂₁X − Zγ̂_m` of a fitted estimate.
pub fn mediator_residuals(data: &Dataset, estimate: &GEstimate) -> DVector<f64> {
    let (mt, _) = targets(data, &estimate.beta_hat);
    mt - data.confounders() * &estimate.gamma_hat.gamma_m2
}

/// Variance-weighted exposure average `E_n[X ε̂²] / E_n[ε̂²]`.
///
/// When the outcome model wrongly omits an exposure–mediator interaction
/// `θ`, the no-interaction NIDE converges to `β₁(β₂ + θ x̄)` with this `x̄`.
pub fn x_bar_oracle(data: &Dataset, mediator_residuals: &DVector<f64>) -> Result<f64> {
    let sq = mediator_residuals.map(|e| e * e);
    let denom = data.weighted_mean(&sq);
    if !(denom > 0.0) {
        return Err(GmedError::ZeroResidualVariance);
    }
    Ok(data.weighted_mean(&data.exposure().component_mul(&sq)) / denom)
}
