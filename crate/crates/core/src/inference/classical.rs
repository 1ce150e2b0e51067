use super::{TestMethod, TestOutcome};
use crate::data::Dataset;
use crate::error::Result;
use crate::estimation::ols_product;

/// Sobel `W = T₁T₂/(T₁+T₂)` and likelihood-ratio `LR = min(T₁, T₂)` from two
/// squared t-statistics. `W ≤ LR` always.
pub fn sobel_lr_from_t(t1: f64, t2: f64) -> (f64, f64) {
    let (lo, hi) = (t1.min(t2), t1.max(t2));
    // lo / (1 + lo/hi) equals T₁T₂/(T₁+T₂); the rounded denominator is never
    // below one, so the rounded quotient cannot exceed lo
    let w = if hi > 0.0 { lo / (1.0 + lo / hi) } else { 0.0 };
    (w, lo)
}

/// Classical tests of no mediation from the product-of-coefficients
/// regressions `M ~ X + Z` and `Y ~ M + X + Z`.
pub fn ols_sobel_lr(data: &Dataset) -> Result<(TestOutcome, TestOutcome)> {
    let fit = ols_product(data, false)?;
    let (w, lr) = sobel_lr_from_t(fit.t_squared(0), fit.t_squared(1));
    Ok((TestOutcome::chi2(w, TestMethod::SobelOls, 0.0), TestOutcome::chi2(lr, TestMethod::LrOls, 0.0)))
}
