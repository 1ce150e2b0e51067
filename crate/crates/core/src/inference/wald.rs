use super::{TestMethod, TestOutcome};
use crate::error::{GmedError, Result};
use crate::estimation::GEstimate;

/// `β₁²β₂² / (β₁²σ₂² + β₂²σ₁² + 2β₁β₂Δ)`, zero when the numerator is zero.
pub fn sobel_statistic(b1: f64, b2: f64, var1: f64, var2: f64, cov12: f64) -> Result<f64> {
    let num = b1 * b1 * b2 * b2;
    if num == 0.0 {
        return Ok(0.0);
    }
    let den = b1 * b1 * var2 + b2 * b2 * var1 + 2.0 * b1 * b2 * cov12;
    if !(den > 0.0) {
        return Err(GmedError::ZeroDenominator("robust Sobel variance"));
    }
    Ok(num / den)
}

/// Wald test of no mediation with influence-function variances.
pub fn robust_sobel(estimate: &GEstimate) -> Result<TestOutcome> {
    let c = &estimate.beta_cov;
    let b = &estimate.beta_hat;
    let w = sobel_statistic(b.beta1, b.beta2, c[(0, 0)], c[(1, 1)], c[(0, 1)])?;
    Ok(TestOutcome::chi2(w, TestMethod::RobustSobel, 0.0))
}

/// Squared t-statistic `β̂₃²/σ̂₃²` for no direct effect.
pub fn robust_wald_direct(estimate: &GEstimate) -> Result<TestOutcome> {
    let b3 = estimate.beta_hat.beta3;
    if b3 == 0.0 {
        return Ok(TestOutcome::chi2(0.0, TestMethod::RobustWaldDirect, 1.0));
    }
    let var = estimate.beta_cov[(2, 2)];
    if !(var > 0.0) {
        return Err(GmedError::ZeroDenominator("direct-effect variance"));
    }
    Ok(TestOutcome::chi2(b3 * b3 / var, TestMethod::RobustWaldDirect, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_to_ols_form_without_covariance() {
        // T₁ = T₂ = 4: β = 2, σ² = 1
        assert!((sobel_statistic(2.0, 2.0, 1.0, 1.0, 0.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficient_gives_zero() {
        assert_eq!(sobel_statistic(0.0, 3.0, 1.0, 1.0, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_variance_rejected() {
        assert_eq!(sobel_statistic(1.0, 1.0, 0.0, 0.0, 0.0), Err(GmedError::ZeroDenominator("robust Sobel variance")));
    }
}
