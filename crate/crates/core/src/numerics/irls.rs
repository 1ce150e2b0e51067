use nalgebra::{DMatrix, DVector};

use super::linalg::{weighted_gram, PivotedCholesky};
use super::wls::{check_shapes, LinearFit};
use crate::error::{GmedError, Result};

/// Controls for the logistic IRLS fit.
#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    /// Bound on the max-norm of the mean weighted score.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficient magnitude treated as evidence of separation.
    pub separation_cap: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, separation_cap: 30.0 }
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(y: &DVector<f64>, w: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    // log(1 + e^eta) computed without overflow
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    (0..y.len()).map(|i| w[i] * (y[i] * eta[i] - softplus(eta[i]))).sum()
}

/// Weighted Bernoulli-logit maximum likelihood by Newton / IRLS.
///
/// The returned residuals are `y − expit(Xb)`. Convergence is declared when
/// the mean weighted score `Σ wᵢ xᵢ (yᵢ − pᵢ) / Σ wᵢ` has max-norm below
/// `opts.tol`.
pub fn irls_logistic(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: &DVector<f64>,
    opts: &IrlsOptions,
) -> Result<LinearFit> {
    check_shapes(design, response, weights)?;
    if response.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(GmedError::InvalidInput("logistic response must be 0/1".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(GmedError::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.sum();
    if total <= 0.0 {
        return Err(GmedError::InvalidInput("weights sum to zero".into()));
    }
    let p = design.ncols();
    let mut coef = DVector::zeros(p);
    let mut eta = design * &coef;
    let mut loglik = log_likelihood(response, weights, &eta);
    let mut last_score = f64::INFINITY;

    for _ in 0..opts.max_iter {
        let prob = eta.map(expit);
        let resid = response - &prob;
        let score = design.transpose() * resid.component_mul(weights) / total;
        last_score = score.amax();
        if last_score <= opts.tol {
            return Ok(LinearFit { coefficients: coef, residuals: resid, design_rank: p });
        }
        let curvature = weights.component_mul(&prob.map(|q| q * (1.0 - q))) / total;
        let (info, _) = weighted_gram(design, &curvature, &resid);
        let step = PivotedCholesky::new(&info)?.solve(&score);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &coef + &step * scale;
            let trial_eta = design * &trial;
            let trial_ll = log_likelihood(response, weights, &trial_eta);
            if trial_ll.is_finite() && trial_ll >= loglik - 1e-12 * loglik.abs() {
                coef = trial;
                eta = trial_eta;
                loglik = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let magnitude = coef.amax();
        if magnitude > opts.separation_cap {
            return Err(GmedError::SeparationDetected { magnitude });
        }
        if !accepted {
            break;
        }
    }
    let prob = eta.map(expit);
    let resid = response - &prob;
    let score = (design.transpose() * resid.component_mul(weights) / total).amax();
    if score <= opts.tol {
        return Ok(LinearFit { coefficients: coef, residuals: resid, design_rank: p });
    }
    Err(GmedError::NonConvergence { iterations: opts.max_iter, residual: score.min(last_score) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_fit(ones: usize, n: usize) -> f64 {
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_fn(n, |i, _| if i < ones { 1.0 } else { 0.0 });
        let fit = irls_logistic(&x, &y, &DVector::from_element(n, 1.0), &IrlsOptions::default()).unwrap();
        fit.coefficients[0]
    }

    #[test]
    fn balanced_intercept_is_zero() {
        assert!(intercept_fit(10, 20).abs() < 1e-10);
    }

    #[test]
    fn three_quarters_gives_log_three() {
        assert!((intercept_fit(15, 20) - 3f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn slope_matches_golden_section_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| if rng.random::<f64>() < expit(x) { 1.0 } else { 0.0 })
            .collect();
        // slope-only model so the oracle is a 1-d maximisation
        let design = DMatrix::from_column_slice(n, 1, &xs);
        let y = DVector::from_vec(ys.clone());
        let fit = irls_logistic(&design, &y, &DVector::from_element(n, 1.0), &IrlsOptions::default()).unwrap();

        let ll = |b: f64| -> f64 {
            xs.iter()
                .zip(&ys)
                .map(|(&x, &y)| {
                    let p = expit(b * x);
                    y * p.ln() + (1.0 - y) * (1.0 - p).ln()
                })
                .sum()
        };
        let (mut lo, mut hi) = (-5.0f64, 5.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if ll(a) > ll(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((fit.coefficients[0] - oracle).abs() < 1e-6, "{} vs {}", fit.coefficients[0], oracle);
    }

    #[test]
    fn score_is_below_tolerance_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 300;
        let design = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.5..1.5) });
        let y = DVector::from_fn(n, |i, _| if rng.random::<f64>() < expit(0.3 + design[(i, 1)]) { 1.0 } else { 0.0 });
        let w = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
        let opts = IrlsOptions::default();
        let fit = irls_logistic(&design, &y, &w, &opts).unwrap();
        let score = design.transpose() * fit.residuals.component_mul(&w) / w.sum();
        assert!(score.amax() <= opts.tol);
    }

    #[test]
    fn perfect_separation_is_detected() {
        let design = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 9.5 });
        let y = DVector::from_fn(20, |i, _| if i >= 10 { 1.0 } else { 0.0 });
        let err = irls_logistic(&design, &y, &DVector::from_element(20, 1.0), &IrlsOptions::default()).unwrap_err();
        assert!(matches!(err, GmedError::SeparationDetected { .. }));
    }

    #[test]
    fn non_binary_response_is_rejected() {
        let design = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        assert!(irls_logistic(&design, &y, &DVector::from_element(3, 1.0), &IrlsOptions::default()).is_err());
    }
}
